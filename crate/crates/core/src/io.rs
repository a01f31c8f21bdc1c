//! File formats: matrices, masks, trees, group structures, voxel maps,
//! fitted models, and evaluation reports.
//!
//! Matrices are headerless CSV (one sample per row) with 17 significant
//! digits, lossless for 64-bit floats, or an optional binary format with
//! magic `TSP1`. Node and voxel ids are 1-based on disk and 0-based in
//! memory. Every writer goes through an atomic temp-file-and-rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};
use crate::grid::GridMask;
use crate::harness::EvalReport;
use crate::loss::LossKind;
use crate::penalty::GroupStructure;
use crate::solver::FitResult;

const BIN_MAGIC: &[u8; 4] = b"TSP1";

/// Format a float with 17 significant digits (round-trips exactly).
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| Error::io(format!("creating temp file for {}", path.display()), e))?;
    tmp.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// SHA-256 of a file, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

// ---------------------------------------------------------------------------
// Matrices and vectors
// ---------------------------------------------------------------------------

pub fn write_matrix_csv(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt_f64(*v));
            first = false;
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, tok)| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::parse(
                        path.display().to_string(),
                        lineno + 1,
                        format!("column {}: not a number: '{}'", col + 1, tok.trim()),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path.display().to_string(),
                    lineno + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path.display().to_string(), 1, "empty matrix"));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(|_| {
        Error::parse(path.display().to_string(), 1, "inconsistent matrix shape")
    })
}

pub fn write_vector_csv(path: &Path, v: ArrayView1<'_, f64>) -> Result<()> {
    let mut out = String::new();
    for x in v.iter() {
        out.push_str(&fmt_f64(*x));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_vector_csv(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::parse(
            path.display().to_string(),
            1,
            format!("expected a single column, found {}", m.ncols()),
        ));
    }
    Ok(m.column(0).to_owned())
}

/// Class labels: one 1-based integer per line.
pub fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let label: usize = t.parse().map_err(|_| {
            Error::parse(
                path.display().to_string(),
                lineno + 1,
                format!("not a class label: '{t}'"),
            )
        })?;
        if label == 0 {
            return Err(Error::parse(
                path.display().to_string(),
                lineno + 1,
                "labels are 1-based",
            ));
        }
        out.push(label - 1);
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::new();
    for &l in labels {
        let _ = writeln!(out, "{}", l + 1);
    }
    atomic_write(path, out.as_bytes())
}

/// Binary matrix: magic `TSP1`, little-endian u64 `nrows`, `ncols`, then
/// row-major little-endian f64 values.
pub fn write_matrix_bin(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = Vec::with_capacity(20 + m.len() * 8);
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn read_matrix_bin(path: &Path) -> Result<Array2<f64>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = |msg: &str| Error::parse(path.display().to_string(), 0, msg);
    if bytes.len() < 20 || &bytes[..4] != BIN_MAGIC {
        return Err(bad("missing TSP1 magic"));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 20 + n * d * 8 {
        return Err(bad("truncated matrix payload"));
    }
    let values: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((n, d), values).map_err(|_| bad("inconsistent shape"))
}

// ---------------------------------------------------------------------------
// Grid masks
// ---------------------------------------------------------------------------

/// Mask file: header `dims nx ny nz`, then the 0/1 grid in row-major order,
/// one grid row per line.
pub fn write_mask(path: &Path, mask: &GridMask) -> Result<()> {
    let (nx, ny, nz) = mask.dims();
    let mut out = format!("dims {nx} {ny} {nz}\n");
    let included = mask.included();
    for z in 0..nz {
        for y in 0..ny {
            let base = (z * ny + y) * nx;
            let line: Vec<&str> = (0..nx)
                .map(|x| if included[base + x] { "1" } else { "0" })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_mask(path: &Path) -> Result<GridMask> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path.display().to_string(), 1, "empty mask file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "dims" {
        return Err(Error::parse(
            path.display().to_string(),
            1,
            "expected header 'dims nx ny nz'",
        ));
    }
    let dims: Vec<usize> = toks[1..]
        .iter()
        .map(|t| {
            t.parse().map_err(|_| {
                Error::parse(path.display().to_string(), 1, format!("bad dimension '{t}'"))
            })
        })
        .collect::<Result<_>>()?;
    let mut included = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for (lineno, line) in lines {
        for tok in line.split_whitespace() {
            match tok {
                "0" => included.push(false),
                "1" => included.push(true),
                other => {
                    return Err(Error::parse(
                        path.display().to_string(),
                        lineno + 1,
                        format!("expected 0 or 1, found '{other}'"),
                    ))
                }
            }
        }
    }
    GridMask::new((dims[0], dims[1], dims[2]), included)
}

// ---------------------------------------------------------------------------
// Cluster trees
// ---------------------------------------------------------------------------

/// Tree file: one node per line, `id leaf|internal child1 child2 depth size
/// delta`, ids 1-based in creation order, `-` for absent children.
pub fn write_tree(path: &Path, tree: &ClusterTree) -> Result<()> {
    let mut out = String::new();
    for j in 0..tree.q() {
        let node = tree.node(j)?;
        match node.children {
            None => {
                let _ = writeln!(
                    out,
                    "{} leaf - - {} {} {}",
                    j + 1,
                    node.depth,
                    node.size(),
                    fmt_f64(node.delta)
                );
            }
            Some((a, b)) => {
                let _ = writeln!(
                    out,
                    "{} internal {} {} {} {} {}",
                    j + 1,
                    a + 1,
                    b + 1,
                    node.depth,
                    node.size(),
                    fmt_f64(node.delta)
                );
            }
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_tree(path: &Path) -> Result<ClusterTree> {
    let text = read_to_string(path)?;
    let mut children: Vec<Option<(usize, usize)>> = Vec::new();
    let mut deltas: Vec<f64> = Vec::new();
    let mut depths: Vec<usize> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::parse(path.display().to_string(), lineno + 1, msg);
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", toks.len())));
        }
        let id: usize = toks[0]
            .parse()
            .map_err(|_| bad(format!("bad node id '{}'", toks[0])))?;
        if id != children.len() + 1 {
            return Err(bad(format!(
                "node ids must be consecutive from 1; expected {}",
                children.len() + 1
            )));
        }
        let ch = match toks[1] {
            "leaf" => None,
            "internal" => {
                let a: usize = toks[2]
                    .parse()
                    .map_err(|_| bad(format!("bad child id '{}'", toks[2])))?;
                let b: usize = toks[3]
                    .parse()
                    .map_err(|_| bad(format!("bad child id '{}'", toks[3])))?;
                if a == 0 || b == 0 {
                    return Err(bad("child ids are 1-based".into()));
                }
                Some((a - 1, b - 1))
            }
            other => return Err(bad(format!("expected 'leaf' or 'internal', found '{other}'"))),
        };
        let depth: usize = toks[4]
            .parse()
            .map_err(|_| bad(format!("bad depth '{}'", toks[4])))?;
        let size: usize = toks[5]
            .parse()
            .map_err(|_| bad(format!("bad size '{}'", toks[5])))?;
        let delta: f64 = toks[6]
            .parse()
            .map_err(|_| bad(format!("bad merge cost '{}'", toks[6])))?;
        if !delta.is_finite() {
            return Err(bad("non-finite merge cost".into()));
        }
        children.push(ch);
        deltas.push(delta);
        depths.push(depth);
        sizes.push(size);
    }
    if children.is_empty() {
        return Err(Error::parse(path.display().to_string(), 1, "empty tree file"));
    }
    let p = children.iter().filter(|c| c.is_none()).count();
    let tree = ClusterTree::from_merges(p, children, deltas)?;
    // Stored depths and sizes must agree with the reconstructed topology.
    for j in 0..tree.q() {
        let node = tree.node(j)?;
        if node.depth != depths[j] || node.size() != sizes[j] {
            return Err(Error::parse(
                path.display().to_string(),
                j + 1,
                format!(
                    "stored depth/size ({}, {}) disagree with topology ({}, {})",
                    depths[j],
                    sizes[j],
                    node.depth,
                    node.size()
                ),
            ));
        }
    }
    Ok(tree)
}

// ---------------------------------------------------------------------------
// Group structures (audit dumps)
// ---------------------------------------------------------------------------

/// One group per line: `eta idx1 idx2 ...` with 1-based indices.
pub fn write_groups(path: &Path, gs: &GroupStructure) -> Result<()> {
    let mut out = String::new();
    for g in gs.groups() {
        out.push_str(&fmt_f64(g.weight));
        for &i in &g.indices {
            let _ = write!(out, " {}", i + 1);
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// Voxel maps
// ---------------------------------------------------------------------------

/// Row-major CSV grid of a voxel map; excluded cells are written as 0.
pub fn write_voxel_map_csv(path: &Path, map: ArrayView1<'_, f64>, mask: &GridMask) -> Result<()> {
    if map.len() != mask.p() {
        return Err(Error::DimensionMismatch {
            context: "map length vs mask voxels",
            left: map.len(),
            right: mask.p(),
        });
    }
    let (nx, ny, nz) = mask.dims();
    let mut out = String::new();
    for z in 0..nz {
        for y in 0..ny {
            let mut first = true;
            for x in 0..nx {
                if !first {
                    out.push(',');
                }
                let v = mask.id_at(x, y, z).map_or(0.0, |id| map[id]);
                out.push_str(&fmt_f64(v));
                first = false;
            }
            out.push('\n');
        }
    }
    atomic_write(path, out.as_bytes())
}

/// 8-bit ASCII PGM with linear min-max scaling; the scaling is recorded in
/// a `<path>.scale.txt` sidecar (lossy by design, for inspection only).
/// Only 2D masks (nz = 1) can be rendered.
pub fn write_voxel_map_pgm(path: &Path, map: ArrayView1<'_, f64>, mask: &GridMask) -> Result<()> {
    let (nx, ny, nz) = mask.dims();
    if nz != 1 {
        return Err(Error::BadDims(nx, ny, nz));
    }
    if map.len() != mask.p() {
        return Err(Error::DimensionMismatch {
            context: "map length vs mask voxels",
            left: map.len(),
            right: mask.p(),
        });
    }
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P2\n{nx} {ny}\n255\n");
    for y in 0..ny {
        let row: Vec<String> = (0..nx)
            .map(|x| {
                let v = mask.id_at(x, y, 0).map_or(lo, |id| map[id]);
                format!("{}", ((v - lo) / span * 255.0).round() as u8)
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())?;
    let sidecar = format!("{} {}\n", fmt_f64(lo), fmt_f64(hi));
    let mut scale_path = path.as_os_str().to_owned();
    scale_path.push(".scale.txt");
    atomic_write(Path::new(&scale_path), sidecar.as_bytes())
}

// ---------------------------------------------------------------------------
// Fit results
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct FitMeta {
    lambda: f64,
    penalty: String,
    loss: LossKind,
    augmented: bool,
    iterations: usize,
    converged: bool,
    intercept: Vec<f64>,
    objective: Vec<f64>,
    coefficients: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".coef.csv");
    std::path::PathBuf::from(s)
}

/// Fit metadata as JSON next to a coefficient-matrix CSV sidecar
/// (`<path>.coef.csv`, one row per feature).
pub fn write_fit(path: &Path, fit: &FitResult) -> Result<()> {
    let coef = sidecar_path(path);
    write_matrix_csv(&coef, fit.weights.view())?;
    let meta = FitMeta {
        lambda: fit.lambda,
        penalty: fit.penalty.clone(),
        loss: fit.loss,
        augmented: fit.augmented,
        iterations: fit.iterations,
        converged: fit.converged,
        intercept: fit.intercept.to_vec(),
        objective: fit.objective.clone(),
        coefficients: coef
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
    atomic_write(path, json.as_bytes())
}

pub fn read_fit(path: &Path) -> Result<FitResult> {
    let text = read_to_string(path)?;
    let meta: FitMeta = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
    let weights = read_matrix_csv(&sidecar_path(path))?;
    Ok(FitResult {
        weights,
        intercept: Array1::from_vec(meta.intercept),
        objective: meta.objective,
        iterations: meta.iterations,
        converged: meta.converged,
        lambda: meta.lambda,
        penalty: meta.penalty,
        loss: meta.loss,
        augmented: meta.augmented,
    })
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

/// Report CSV: header row, then one line per fold.
pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("model,fold,error,lambda,nonzero_percent\n");
    for (i, (err, lam)) in report
        .fold_errors
        .iter()
        .zip(&report.chosen_lambda)
        .enumerate()
    {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            report.model,
            i + 1,
            fmt_f64(*err),
            fmt_f64(*lam),
            fmt_f64(report.median_nonzero_pct)
        );
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_report_csv(path: &Path) -> Result<EvalReport> {
    let text = read_to_string(path)?;
    let mut model = String::new();
    let mut fold_errors = Vec::new();
    let mut chosen_lambda = Vec::new();
    let mut nnz = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != 5 {
            return Err(Error::parse(
                path.display().to_string(),
                lineno + 1,
                format!("expected 5 columns, found {}", toks.len()),
            ));
        }
        model = toks[0].to_string();
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| {
                Error::parse(
                    path.display().to_string(),
                    lineno + 1,
                    format!("not a number: '{s}'"),
                )
            })
        };
        fold_errors.push(parse(toks[2])?);
        chosen_lambda.push(parse(toks[3])?);
        nnz.push(parse(toks[4])?);
    }
    if fold_errors.is_empty() {
        return Err(Error::parse(path.display().to_string(), 1, "no fold rows"));
    }
    let mean = fold_errors.iter().sum::<f64>() / fold_errors.len() as f64;
    let std = if fold_errors.len() > 1 {
        (fold_errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
            / (fold_errors.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        model,
        mean_error: mean,
        std_error: std,
        median_nonzero_pct: nnz[0],
        fold_errors,
        chosen_lambda,
        wall_s: 0.0,
        final_fit: None,
    })
}

/// Aligned text table over merged reports, with signed-rank p-values
/// against the best model (`-` marks the reference).
pub fn format_report_table(rows: &[(EvalReport, Option<f64>)]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<32} {:>18} {:>24} {:>12}\n",
        "model", "error (mean,std)", "p-value vs best", "nonzeros (%)"
    );
    out.push_str(&header);
    out.push_str(&"-".repeat(header.len() - 1));
    out.push('\n');
    for (report, p) in rows {
        let pcol = match p {
            None => "-".to_string(),
            Some(p) => format!("{p:.4}"),
        };
        let _ = writeln!(
            out,
            "{:<32} {:>8.3} {:>9.3} {:>24} {:>12.3}",
            report.model, report.mean_error, report.std_error, pcol, report.median_nonzero_pct
        );
    }
    out
}
