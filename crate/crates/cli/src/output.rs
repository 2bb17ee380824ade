//! File output. Every file is written to a temporary name in the target
//! directory and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use motionsketch::control::ControlSignal;
use motionsketch::Curve;

use crate::commands::Failure;

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Failure::io(path, e));
    }
    Ok(())
}

/// 17 significant digits.
fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn table(prefix: &str, rows: usize, cols: usize, t: impl Fn(usize) -> f64, v: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::from("t");
    for i in 1..=rows {
        let _ = write!(out, ",{prefix}{i}");
    }
    out.push('\n');
    for a in 0..cols {
        num(&mut out, t(a));
        for i in 0..rows {
            out.push(',');
            num(&mut out, v(i, a));
        }
        out.push('\n');
    }
    out
}

/// `t,v1..vn`, one row per node.
pub fn curve_csv(c: &Curve) -> String {
    table("v", c.dim(), c.n_nodes(), |a| c.t(a), |i, a| c.nodes()[(i, a)])
}

/// `t,u1..up`, one row per sample.
pub fn controls_csv(u: &ControlSignal) -> String {
    let last = (u.n_nodes() - 1) as f64;
    table("u", u.n_inputs(), u.n_nodes(), |a| a as f64 / last, |i, a| u.samples()[(i, a)])
}

/// `snapshot_s=<s>.csv` with the shortest decimal that round-trips `s`.
pub fn snapshot_name(s: f64) -> String {
    format!("snapshot_s={s}.csv")
}

/// Paths relative to the output directory, as written into reports.
pub fn relative(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

pub fn in_dir(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}
