use std::fs;
use std::path::{Path, PathBuf};

use oocs_core::imageops::{on_off_responses, pgm_bytes, read_pgm, PgmScaling};
use oocs_core::kernels::{BalanceReport, DogParams, KernelMatrix, KernelProfile, Polarity};
use oocs_core::{OocsError, Result};

/// Builds a kernel, writes its text form to `out` and returns it with its
/// balance report.
pub fn cmd_gen_kernel(
    size: usize,
    gamma: f64,
    polarity: Polarity,
    profile: KernelProfile,
    out: &Path,
) -> Result<(KernelMatrix, BalanceReport)> {
    let kernel = DogParams::new(size, gamma, polarity)?.kernel(profile)?;
    fs::write(out, kernel.to_text()).map_err(|e| OocsError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let report = kernel.balance();
    Ok((kernel, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutputs {
    pub on: PathBuf,
    pub off: PathBuf,
    pub sum: PathBuf,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>-on.pgm`, `<prefix>-off.pgm` and `<prefix>-sum.pgm`.
///
/// The on/off maps are scaled symmetrically so a zero response is mid-gray;
/// the sum map is `relu(on) + relu(off)` (the raw sum is identically zero)
/// with min/max scaling. Nothing is written unless every map was computed,
/// and a failed write removes the files already written.
pub fn cmd_filter(image_path: &Path, size: usize, gamma: f64, prefix: &Path) -> Result<FilterOutputs> {
    let image = read_pgm(image_path)?;
    let params = DogParams::new(size, gamma, Polarity::On)?;
    let resp = on_off_responses(&image, &params)?;
    let rectified_sum = resp.on.map(f64::abs);
    let out = FilterOutputs {
        on: with_suffix(prefix, "-on.pgm"),
        off: with_suffix(prefix, "-off.pgm"),
        sum: with_suffix(prefix, "-sum.pgm"),
    };
    let files = [
        (&out.on, pgm_bytes(&resp.on, PgmScaling::Symmetric)?),
        (&out.off, pgm_bytes(&resp.off, PgmScaling::Symmetric)?),
        (&out.sum, pgm_bytes(&rectified_sum, PgmScaling::MinMax)?),
    ];
    for (i, (path, bytes)) in files.iter().enumerate() {
        if let Err(e) = fs::write(path, bytes) {
            for (done, _) in &files[..i] {
                let _ = fs::remove_file(done);
            }
            return Err(OocsError::Io {
                path: path.to_path_buf(),
                source: e,
            });
        }
    }
    Ok(out)
}
