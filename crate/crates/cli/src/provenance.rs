use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use o2b_core::io::Provenance;
use o2b_core::model::{MANIFEST_FILE, WEIGHTS_FILE};
use sha2::{Digest, Sha256};

pub const TOOL: &str = concat!("o2b ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over the manifest followed by the weight blob.
pub fn bundle_hash(bundle: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [MANIFEST_FILE, WEIGHTS_FILE] {
        let path = bundle.join(name);
        h.update(fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn provenance(config_hash: &str, bundle_hash: Option<&str>) -> Provenance {
    Provenance::from([
        ("tool".to_string(), TOOL.to_string()),
        ("config_sha256".to_string(), config_hash.to_string()),
        ("bundle_sha256".to_string(), bundle_hash.unwrap_or("none").to_string()),
    ])
}

/// XML comment carrying the provenance entries, for SVG output.
pub fn svg_comment(p: &Provenance) -> String {
    let body: Vec<String> = p.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    format!("<!-- {} -->\n", body.join("; "))
}
