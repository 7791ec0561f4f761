//! JSON Lines mixture manifests, one recipe per line.

use std::io::Write;
use std::path::Path;

use dclust_core::dataset::{MixtureEntry, MixtureManifest};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Serialize, Deserialize)]
struct Line {
    mixture_id: String,
    sources: Vec<String>,
    snr_db: Vec<f64>,
    seed: u64,
}

pub fn to_jsonl(manifest: &MixtureManifest) -> String {
    let mut out = String::new();
    for e in &manifest.entries {
        let line = Line { mixture_id: e.mixture_id.clone(), sources: e.sources.clone(), snr_db: e.snr_db.clone(), seed: e.seed };
        out.push_str(&serde_json::to_string(&line).expect("manifest lines serialise"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<MixtureManifest> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| AppError::format(path, format!("line {}: {e}", n + 1)))?;
        let entry = MixtureEntry { mixture_id: line.mixture_id, sources: line.sources, snr_db: line.snr_db, seed: line.seed };
        entry.validate()?;
        entries.push(entry);
    }
    Ok(MixtureManifest { entries })
}

pub fn read_manifest(path: &Path) -> Result<MixtureManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn write_manifest(path: &Path, manifest: &MixtureManifest) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(to_jsonl(manifest).as_bytes()).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let m = MixtureManifest {
            entries: vec![MixtureEntry { mixture_id: "mix00000".into(), sources: vec!["a.wav".into(), "b.wav".into()], snr_db: vec![2.5], seed: 9 }],
        };
        let text = to_jsonl(&m);
        assert_eq!(text, "{\"mixture_id\":\"mix00000\",\"sources\":[\"a.wav\",\"b.wav\"],\"snr_db\":[2.5],\"seed\":9}\n");
        assert_eq!(parse_jsonl(&text, Path::new("m")).unwrap(), m);
        assert!(matches!(parse_jsonl("{\"mixture_id\":1}", Path::new("m")), Err(AppError::Format { .. })));
        let bad = "{\"mixture_id\":\"x\",\"sources\":[\"a\"],\"snr_db\":[],\"seed\":1}";
        assert!(matches!(parse_jsonl(bad, Path::new("m")), Err(AppError::Core(_))));
    }
}
