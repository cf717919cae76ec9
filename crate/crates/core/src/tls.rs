//! Self-signed, IP-bound certificates and the rustls configurations built
//! from them.
//!
//! Old mobile browsers only expose motion sensors to secure pages, and a
//! hotspot LAN has no DNS name to certify, so the hub presents a certificate
//! whose subject alternative name is the hub's IP literal.

use std::fmt;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rcgen::{CertificateParams, DistinguishedName, DnType, KeyPair};
use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{ring, CryptoProvider, WebPkiSupportedAlgorithms};
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName, UnixTime};
use rustls::{ClientConfig, DigitallySignedStruct, ServerConfig, SignatureScheme};
use thiserror::Error;
use time::{Duration, OffsetDateTime};

pub const CERT_FILE: &str = "cert.pem";
pub const KEY_FILE: &str = "key.pem";

#[derive(Debug, Error)]
pub enum TlsError {
    #[error("invalid IP address {0:?}")]
    InvalidIp(String),
    #[error("validity must be at least one day")]
    InvalidDays,
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("certificate generation failed: {0}")]
    Generate(#[from] rcgen::Error),
    #[error("bad certificate: {0}")]
    BadCertificate(String),
}

impl TlsError {
    pub fn code(&self) -> &'static str {
        match self {
            TlsError::InvalidIp(_) => "invalid-ip",
            TlsError::InvalidDays => "invalid-days",
            TlsError::Write { .. } => "write-failed",
            TlsError::Generate(_) => "generate-failed",
            TlsError::BadCertificate(_) => "bad-certificate",
        }
    }
}

/// PEM text of a generated pair.
#[derive(Clone)]
pub struct GeneratedCert {
    pub cert_pem: String,
    pub key_pem: String,
}

impl fmt::Debug for GeneratedCert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratedCert")
            .field("cert_pem", &self.cert_pem)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct CertFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

/// Builds an ECDSA P-256 certificate valid for `validity_days` from now whose
/// only subject alternative name is `ip`.
pub fn build_certificate(ip: &str, validity_days: u32) -> Result<GeneratedCert, TlsError> {
    let addr: IpAddr = ip.trim().parse().map_err(|_| TlsError::InvalidIp(ip.to_owned()))?;
    if validity_days == 0 {
        return Err(TlsError::InvalidDays);
    }
    let mut params = CertificateParams::new(vec![addr.to_string()])?;
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, addr.to_string());
    dn.push(DnType::OrganizationName, "zombihub");
    params.distinguished_name = dn;
    // backdate slightly so devices with a lagging clock still accept it
    let now = OffsetDateTime::now_utc();
    params.not_before = now - Duration::hours(1);
    params.not_after = now + Duration::days(i64::from(validity_days));
    let key = KeyPair::generate()?;
    let cert = params.self_signed(&key)?;
    Ok(GeneratedCert {
        cert_pem: cert.pem(),
        key_pem: key.serialize_pem(),
    })
}

/// Writes `cert.pem` and `key.pem` into `out_dir`, creating it if needed.
pub fn generate_certificate(ip: &str, validity_days: u32, out_dir: &Path) -> Result<CertFiles, TlsError> {
    let generated = build_certificate(ip, validity_days)?;
    let write = |path: PathBuf, text: &str| {
        std::fs::write(&path, text)
            .map(|_| path.clone())
            .map_err(|source| TlsError::Write { path, source })
    };
    std::fs::create_dir_all(out_dir).map_err(|source| TlsError::Write {
        path: out_dir.to_owned(),
        source,
    })?;
    let cert = write(out_dir.join(CERT_FILE), &generated.cert_pem)?;
    let key = write(out_dir.join(KEY_FILE), &generated.key_pem)?;
    restrict_permissions(&key);
    Ok(CertFiles { cert, key })
}

#[cfg(unix)]
fn restrict_permissions(path: &Path) {
    use std::os::unix::fs::PermissionsExt;
    if let Err(e) = std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600)) {
        log::warn!("could not restrict permissions of {}: {e}", path.display());
    }
}

#[cfg(not(unix))]
fn restrict_permissions(_: &Path) {}

fn provider() -> Arc<CryptoProvider> {
    Arc::new(ring::default_provider())
}

pub fn read_certificates(path: &Path) -> Result<Vec<CertificateDer<'static>>, TlsError> {
    let certs = CertificateDer::pem_file_iter(path)
        .and_then(|it| it.collect::<Result<Vec<_>, _>>())
        .map_err(|e| TlsError::BadCertificate(format!("{}: {e}", path.display())))?;
    if certs.is_empty() {
        return Err(TlsError::BadCertificate(format!("{}: no certificate found", path.display())));
    }
    Ok(certs)
}

/// Server configuration from PEM files; fails with `BadCertificate` when the
/// files are unreadable or the key does not match the certificate.
pub fn server_config(cert: &Path, key: &Path) -> Result<ServerConfig, TlsError> {
    let certs = read_certificates(cert)?;
    let key = PrivateKeyDer::from_pem_file(key)
        .map_err(|e| TlsError::BadCertificate(format!("{}: {e}", key.display())))?;
    ServerConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(|e| TlsError::BadCertificate(e.to_string()))?
        .with_no_client_auth()
        .with_single_cert(certs, key)
        .map_err(|e| TlsError::BadCertificate(e.to_string()))
}

/// Accepts exactly one server certificate, compared byte for byte, whatever
/// name or address was dialled.
#[derive(Debug)]
struct PinnedCert {
    pinned: CertificateDer<'static>,
    algorithms: WebPkiSupportedAlgorithms,
}

impl ServerCertVerifier for PinnedCert {
    fn verify_server_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        if end_entity.as_ref() == self.pinned.as_ref() {
            Ok(ServerCertVerified::assertion())
        } else {
            Err(rustls::Error::General("server certificate does not match the pinned one".into()))
        }
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls12_signature(message, cert, dss, &self.algorithms)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls13_signature(message, cert, dss, &self.algorithms)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.algorithms.supported_schemes()
    }
}

/// Client configuration trusting only `pinned`.
pub fn pinned_client_config(pinned: CertificateDer<'static>) -> Result<ClientConfig, TlsError> {
    let provider = provider();
    let verifier = PinnedCert {
        pinned,
        algorithms: provider.signature_verification_algorithms,
    };
    Ok(ClientConfig::builder_with_provider(provider)
        .with_safe_default_protocol_versions()
        .map_err(|e| TlsError::BadCertificate(e.to_string()))?
        .dangerous()
        .with_custom_certificate_verifier(Arc::new(verifier))
        .with_no_client_auth())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(build_certificate("192.168.43", 30), Err(TlsError::InvalidIp(_))));
        assert!(matches!(build_certificate("phone.local", 30), Err(TlsError::InvalidIp(_))));
        assert!(matches!(build_certificate("10.0.0.1", 0), Err(TlsError::InvalidDays)));
    }

    #[test]
    fn generated_pair_loads() {
        let dir = tempfile::tempdir().unwrap();
        let files = generate_certificate("192.168.43.1", 365, dir.path()).unwrap();
        server_config(&files.cert, &files.key).unwrap();
        let cert = read_certificates(&files.cert).unwrap().remove(0);
        pinned_client_config(cert).unwrap();
    }

    #[test]
    fn mismatched_key_is_bad_certificate() {
        let dir = tempfile::tempdir().unwrap();
        let a = generate_certificate("10.0.0.1", 1, &dir.path().join("a")).unwrap();
        let b = generate_certificate("10.0.0.1", 1, &dir.path().join("b")).unwrap();
        assert!(matches!(server_config(&a.cert, &b.key), Err(TlsError::BadCertificate(_))));
        assert!(matches!(
            server_config(&dir.path().join("none.pem"), &a.key),
            Err(TlsError::BadCertificate(_))
        ));
    }

    #[test]
    fn ipv6_accepted() {
        build_certificate("fe80::1", 7).unwrap();
    }
}
