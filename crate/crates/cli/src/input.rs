//! Command-line inputs that may be inline or file-backed.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use phaseprobe::corpus::Corpus;

/// Reads a list of numbers given inline (`1,2.5 3`) or as a file path.
pub fn read_numbers(arg: &str) -> Result<Vec<f64>> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        fs::read_to_string(path).with_context(|| format!("cannot read {arg}"))?
    } else {
        arg.to_string()
    };
    parse_numbers(&text)
}

pub fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => bail!("not a finite number: {t:?}"),
        })
        .collect()
}

/// A built-in prompt id, or the contents of a text file (one trailing line
/// break removed).
pub fn resolve_prompt(corpus: &Corpus, arg: &str) -> Result<String> {
    if let Some(p) = corpus.get(arg) {
        return Ok(p.text.clone());
    }
    let path = Path::new(arg);
    if !path.is_file() {
        bail!("{arg} is neither a prompt id nor a readable file");
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {arg}"))?;
    let text = text
        .strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(&text)
        .to_string();
    if text.is_empty() {
        bail!("{arg} is empty");
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_inline() {
        assert_eq!(
            parse_numbers("1, 2.5\n3;4").unwrap(),
            vec![1.0, 2.5, 3.0, 4.0]
        );
        assert!(parse_numbers("1,x").is_err());
        assert!(parse_numbers("1,NaN").is_err());
        assert!(parse_numbers("").unwrap().is_empty());
    }

    #[test]
    fn prompts_by_id_or_file() {
        let corpus = Corpus::builtin();
        assert_eq!(
            resolve_prompt(&corpus, "TIPe").unwrap(),
            corpus.get("TIPe").unwrap().text
        );
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("mine.txt");
        fs::write(&f, "Hello there.\n").unwrap();
        assert_eq!(
            resolve_prompt(&corpus, f.to_str().unwrap()).unwrap(),
            "Hello there."
        );
        assert!(resolve_prompt(&corpus, "missing.txt").is_err());
    }
}
