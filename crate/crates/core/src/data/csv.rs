//! Dataset CSV: header `f0,...,f{d-1},label,domain`, one row per sample,
//! label `-1` for unlabeled rows, LF line endings.

use std::fmt::Write as _;
use std::path::Path;

use super::{default_class_names, Domain, LabeledDataset};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::nets::fmt_f64;

pub fn to_csv(ds: &LabeledDataset) -> String {
    let d = ds.dim();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label,domain\n");
    for (r, label) in ds.raw_labels().iter().enumerate() {
        for &v in ds.features().row(r) {
            out.push_str(&fmt_f64(v));
            out.push(',');
        }
        match label {
            Some(l) => {
                let _ = write!(out, "{l}");
            }
            None => out.push_str("-1"),
        }
        let _ = writeln!(out, ",{}", ds.domain());
    }
    out
}

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(ds)).map_err(|e| Error::io(path, e))
}

/// Parses dataset CSV text. An empty data section yields an empty source
/// dataset. Class names are `class0..` up to the largest label seen.
pub fn parse_csv(text: &str, origin: &str) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.len().saturating_sub(2);
    let well_formed = cols.len() >= 3
        && cols[d] == "label"
        && cols[d + 1] == "domain"
        && cols[..d].iter().enumerate().all(|(j, c)| *c == format!("f{j}"));
    if !well_formed {
        return Err(Error::parse(origin, 1, format!("malformed header '{header}'")));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut domain = None;
    let mut max_label = None;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 2 {
            return Err(Error::parse(
                origin,
                n,
                format!("expected {} cells, got {}", d + 2, cells.len()),
            ));
        }
        for c in &cells[..d] {
            let v: f64 = c
                .parse()
                .map_err(|_| Error::parse(origin, n, format!("non-numeric cell '{c}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(origin, n, format!("non-finite cell '{c}'")));
            }
            values.push(v);
        }
        let label: i64 = cells[d]
            .parse()
            .map_err(|_| Error::parse(origin, n, format!("bad label '{}'", cells[d])))?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 => {
                max_label = max_label.max(Some(l as usize));
                Some(l as usize)
            }
            l => return Err(Error::parse(origin, n, format!("bad label {l}"))),
        });
        let row_domain: Domain = cells[d + 1]
            .parse()
            .map_err(|_| Error::parse(origin, n, format!("bad domain '{}'", cells[d + 1])))?;
        match domain {
            None => domain = Some(row_domain),
            Some(dm) if dm != row_domain => {
                return Err(Error::parse(origin, n, "mixed domains in one file"));
            }
            _ => {}
        }
    }
    let n_classes = max_label.map_or(0, |m| m + 1);
    let rows = labels.len();
    LabeledDataset::new(
        Matrix::from_vec(rows, d, values)?,
        labels,
        domain.unwrap_or(Domain::Source),
        default_class_names(n_classes),
    )
}

pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Generator, ShiftSpec};

    #[test]
    fn header_only_is_empty() {
        let d = parse_csv("f0,f1,label,domain\n", "mem").unwrap();
        assert_eq!(d.len(), 0);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn round_trip_generated() {
        let spec = ShiftSpec {
            generator: Generator::GaussianMixture,
            n_per_class: vec![20, 30, 10],
            target_n_per_class: None,
            noise_sigma: 1.0,
            rotation_deg: 12.0,
            mean_shift: [0.3, 0.1],
            mixture_radius: 3.0,
            seed: 4,
        };
        let d = generate(&spec, Domain::Target).unwrap();
        let back = parse_csv(&to_csv(&d), "mem").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn minus_one_is_unlabeled() {
        let d = parse_csv("f0,label,domain\n0.5,-1,target\n1.5,2,target\n", "mem").unwrap();
        assert_eq!(d.raw_labels(), &[None, Some(2)]);
        assert_eq!(d.domain(), Domain::Target);
        assert_eq!(d.n_classes(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("x0,label,domain\n", 1),
            ("f0,label,domain\n1.0,0,source\nabc,0,source\n", 3),
            ("f0,label,domain\n1.0,0,source,extra\n", 2),
            ("f0,f1,label,domain\n1.0,2.0,0,source\n1.0,0,source\n", 3),
            ("f0,label,domain\n1.0,0,moon\n", 2),
            ("f0,label,domain\n1.0,0,source\n1.0,0,target\n", 3),
        ];
        for (text, line) in cases {
            match parse_csv(text, "mem") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }
}
