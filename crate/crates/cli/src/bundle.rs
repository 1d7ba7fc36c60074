//! Text bundle passed between `build-lob` and `verify` on a pipe: the
//! decoded message table followed by each security's L1 CSV.
//!
//! ```text
//! @@ lobtaq-bundle 1 manifest-input-sha256=<hex>
//! @@ messages
//! <message table>
//! @@ l1 <security id>
//! <L1 CSV>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Result};

pub const MAGIC: &str = "@@ lobtaq-bundle 1";

#[derive(Debug, Default, PartialEq)]
pub struct Bundle {
    pub digest: String,
    pub messages: String,
    pub l1: BTreeMap<u32, String>,
}

pub fn is_bundle(text: &str) -> bool {
    text.starts_with(MAGIC)
}

pub fn write_bundle(b: &Bundle) -> String {
    let mut out = String::with_capacity(b.messages.len() + b.l1.values().map(String::len).sum::<usize>() + 256);
    let _ = writeln!(out, "{MAGIC} manifest-input-sha256={}", b.digest);
    out.push_str("@@ messages\n");
    out.push_str(&b.messages);
    for (sid, csv) in &b.l1 {
        let _ = writeln!(out, "@@ l1 {sid}");
        out.push_str(csv);
    }
    out
}

pub fn read_bundle(text: &str) -> Result<Bundle> {
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or_else(|| anyhow!("empty bundle"))?;
    let digest = first
        .trim_end()
        .strip_prefix(MAGIC)
        .ok_or_else(|| anyhow!("not a lobtaq bundle"))?
        .trim()
        .strip_prefix("manifest-input-sha256=")
        .unwrap_or("")
        .to_string();
    let mut b = Bundle {
        digest,
        ..Bundle::default()
    };
    let mut current: Option<&mut String> = None;
    for line in lines {
        if let Some(section) = line.strip_prefix("@@ ") {
            let section = section.trim();
            current = if section == "messages" {
                Some(&mut b.messages)
            } else if let Some(id) = section.strip_prefix("l1 ") {
                let id: u32 = id
                    .trim()
                    .parse()
                    .map_err(|_| anyhow!("bad bundle section `{section}`"))?;
                Some(b.l1.entry(id).or_default())
            } else {
                bail!("unknown bundle section `{section}`");
            };
            continue;
        }
        match current.as_mut() {
            Some(buf) => buf.push_str(line),
            None => bail!("bundle content before the first section"),
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut b = Bundle {
            digest: "ab".into(),
            messages: "h\nrow\n".into(),
            ..Bundle::default()
        };
        b.l1.insert(24, "x,y\n1,2\n".into());
        b.l1.insert(25, "x,y\n".into());
        let text = write_bundle(&b);
        assert!(is_bundle(&text));
        assert_eq!(read_bundle(&text).unwrap(), b);
        assert!(read_bundle("nope").is_err());
    }
}
