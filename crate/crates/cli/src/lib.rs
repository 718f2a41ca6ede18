//! Helpers shared by the `mlc`, `bench` and `lnic` binaries.

use std::path::Path;

use anyhow::{Context, Result};
use lnic_core::emulator::NicModel;
use lnic_core::ir::{parse_program, MLProgram};

/// The default model, or one read from a `key = value` config file.
pub fn load_model(path: Option<&Path>) -> Result<NicModel> {
    match path {
        None => Ok(NicModel::default()),
        Some(p) => NicModel::from_file(p).with_context(|| format!("reading NIC config {}", p.display())),
    }
}

pub fn read_program(path: &Path) -> Result<MLProgram> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_program(&text).with_context(|| format!("parsing {}", path.display()))
}

/// UTF-8 text as is, anything else as hex.
pub fn show_bytes(b: &[u8]) -> String {
    match std::str::from_utf8(b) {
        Ok(s) if !s.chars().any(|c| c.is_control() && c != '\n' && c != '\t') => s.to_string(),
        _ => hex::encode(b),
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_shown_as_text_or_hex() {
        assert_eq!(show_bytes(b"hi there\n"), "hi there\n");
        assert_eq!(show_bytes(&[0, 255, 16]), "00ff10");
        assert_eq!(show_bytes(&[b'a', 7]), "6107");
    }

    #[test]
    fn model_defaults_without_a_file() {
        assert_eq!(load_model(None).unwrap(), NicModel::default());
        assert!(load_model(Some(Path::new("/nonexistent/nic.toml"))).is_err());
    }
}
