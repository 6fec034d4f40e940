//! Artifact writing: CSV records with a header row, pretty tables, atomic
//! file replacement.

use std::io::Write;
use std::path::{Path, PathBuf};

/// Column names plus rows of already formatted fields.
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Written after the records as a `#` comment line.
    pub footer: Option<String>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
            footer: None,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> std::io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let mut bytes = w.into_inner().map_err(|e| e.into_error())?;
        if let Some(f) = &self.footer {
            bytes.extend_from_slice(format!("# {f}\n").as_bytes());
        }
        Ok(bytes)
    }

    /// Right-aligned columns for terminals.
    pub fn pretty(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = format!("{}\n", line(self.header.clone()));
        for r in &self.rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        if let Some(f) = &self.footer {
            out.push_str(&format!("# {f}\n"));
        }
        out
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v.is_nan() {
        String::new()
    } else if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes `bytes` to `dir/name` via a temporary file in the same directory and
/// a rename, so readers never see a partial artifact.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(&format!(".{name}.")).tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

/// Collects the artifacts of one command.
pub struct Sink {
    pub dir: PathBuf,
    pub pretty: bool,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: PathBuf, pretty: bool) -> Self {
        Self {
            dir,
            pretty,
            written: Vec::new(),
        }
    }

    pub fn table(&mut self, t: &Table) -> std::io::Result<()> {
        let path = write_atomic(&self.dir, &format!("{}.csv", t.name), &t.to_csv()?)?;
        if self.pretty {
            println!("{}:\n{}", t.name, t.pretty());
        }
        self.written.push(path);
        Ok(())
    }

    pub fn file(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = write_atomic(&self.dir, name, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_header() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b\n1,\"x,y\"\n");
        assert!(t.pretty().starts_with("a    b\n"));
        t.footer = Some("done".into());
        assert!(String::from_utf8(t.to_csv().unwrap()).unwrap().ends_with("\n# done\n"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "f.txt", b"one").unwrap();
        write_atomic(dir.path(), "f.txt", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("f.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -2.5e-9, 1.0 / 3.0, 1.4e-13, 3e20] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), "");
        assert_eq!(num(1.5e-13), "1.5e-13");
    }
}
