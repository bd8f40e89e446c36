//! FASTA alignments.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::Alignment;

/// What to do with alignment columns containing anything but `ACGT`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ambiguity {
    /// Drop the whole column.
    Drop,
    #[default]
    Error,
}

impl FromStr for Ambiguity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(Ambiguity::Drop),
            "error" => Ok(Ambiguity::Error),
            _ => Err(Error::Usage(format!("unknown ambiguity policy '{s}' (expected drop or error)"))),
        }
    }
}

/// Raw records in file order.
pub fn read_records(text: &str) -> Result<Vec<(String, String)>> {
    let mut records: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return Err(Error::Parse(format!("fasta: empty record name on line {}", lineno + 1)));
            }
            records.push((name, String::new()));
        } else {
            match records.last_mut() {
                Some((_, seq)) => seq.extend(line.chars().filter(|c| !c.is_whitespace())),
                None => return Err(Error::Parse("fasta: sequence data before the first header".into())),
            }
        }
    }
    Ok(records)
}

/// Reads an alignment. When the record names are exactly `1..n` the taxa
/// are ordered numerically, otherwise in file order.
pub fn read(text: &str, ambiguity: Ambiguity) -> Result<Alignment> {
    let mut records = read_records(text)?;
    if records.is_empty() {
        return Err(Error::Parse("fasta: no records".into()));
    }
    let mut names: Vec<&String> = records.iter().map(|(n, _)| n).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parse("fasta: duplicate record name".into()));
    }
    let numeric: Option<Vec<usize>> = records.iter().map(|(n, _)| n.parse().ok()).collect();
    if let Some(mut nums) = numeric {
        nums.sort_unstable();
        if nums == (1..=records.len()).collect::<Vec<_>>() {
            records.sort_by_key(|(n, _)| n.parse::<usize>().unwrap());
        }
    }
    let len = records[0].1.len();
    if records.iter().any(|(_, s)| s.len() != len) {
        return Err(Error::Parse("fasta: sequences have different lengths".into()));
    }
    let seqs: Vec<Vec<u8>> = records.iter().map(|(_, s)| s.to_ascii_uppercase().into_bytes()).collect();
    let mut aln = Alignment::new(records.iter().map(|(n, _)| n.clone()).collect());
    for site in 0..len {
        let column: Vec<u8> = seqs.iter().map(|s| s[site]).collect();
        if let Some(&bad) = column.iter().find(|c| !b"ACGT".contains(c)) {
            match ambiguity {
                Ambiguity::Drop => continue,
                Ambiguity::Error => {
                    return Err(Error::Parse(format!(
                        "fasta: state '{}' at site {} (use --ambiguous=drop to skip such columns)",
                        bad as char,
                        site + 1
                    )))
                }
            }
        }
        *aln.patterns.entry(String::from_utf8(column).unwrap()).or_insert(0) += 1;
    }
    Ok(aln)
}

pub fn write(aln: &Alignment) -> String {
    let mut out = String::new();
    for (name, seq) in aln.taxa.iter().zip(aln.to_sequences()) {
        out.push('>');
        out.push_str(name);
        out.push('\n');
        for chunk in seq.as_bytes().chunks(60) {
            out.push_str(std::str::from_utf8(chunk).unwrap());
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_writes() {
        let text = ">2 second\nAC\nGT\n>1\nacgA\n";
        let aln = read(text, Ambiguity::Error).unwrap();
        assert_eq!(aln.taxa, vec!["1", "2"]);
        assert_eq!(aln.total_sites(), 4);
        assert_eq!(aln.patterns["AA"], 1);
        assert_eq!(read(&write(&aln), Ambiguity::Error).unwrap(), aln);
    }

    #[test]
    fn ambiguity_policy() {
        let text = ">a\nACN-\n>b\nACGT\n";
        assert!(matches!(read(text, Ambiguity::Error), Err(Error::Parse(_))));
        let aln = read(text, Ambiguity::Drop).unwrap();
        assert_eq!(aln.total_sites(), 2);
        assert_eq!(aln.taxa, vec!["a", "b"]);
    }

    #[test]
    fn malformed_input() {
        assert!(read("ACGT\n", Ambiguity::Error).is_err());
        assert!(read(">a\nAC\n>b\nA\n", Ambiguity::Error).is_err());
        assert!(read(">a\nAC\n>a\nAA\n", Ambiguity::Error).is_err());
        assert!(read("", Ambiguity::Error).is_err());
    }
}
