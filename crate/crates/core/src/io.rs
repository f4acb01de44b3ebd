//! Self-describing binary containers (length-prefixed JSON header + raw
//! little-endian f64 payload), checkpoints, CSV export, and trace logs.
//! All writes are atomic: write to a temp file in the target directory,
//! then rename.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::lbfgs::IterRecord;
use crate::model::{MlpParameters, ModelKind};
use crate::tdks::CorrelationGrid;
use crate::tdse::KsInitialPair;
use crate::trainer::Control;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Textual file header. The payload is the concatenation of the declared
/// arrays, row-major, as little-endian 8-byte IEEE-754 doubles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub dtype: String,
    pub arrays: Vec<ArrayDecl>,
    pub grid: Option<GridSpec>,
    /// Pinned fs-per-a.u. conversion, recorded for provenance.
    pub fs_per_au: f64,
    /// Hash of the generating run configuration, hex-encoded.
    pub config_hash: String,
    pub code_version: String,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Header {
    pub fn new(kind: &str, grid: Option<GridSpec>, config_hash: u64) -> Self {
        Header {
            format_version: FORMAT_VERSION,
            kind: kind.into(),
            dtype: "f64le".into(),
            arrays: Vec::new(),
            grid,
            fs_per_au: crate::FS_PER_AU,
            config_hash: format!("{config_hash:016x}"),
            code_version: env!("CARGO_PKG_VERSION").into(),
            meta: serde_json::Map::new(),
        }
    }

    pub fn declare(&mut self, name: &str, shape: &[usize]) {
        self.arrays.push(ArrayDecl { name: name.into(), shape: shape.to_vec() });
    }

    pub fn with_meta(mut self, key: &str, value: serde_json::Value) -> Self {
        self.meta.insert(key.into(), value);
        self
    }

    fn declared_len(&self) -> usize {
        self.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum()
    }

    pub fn array_index(&self, name: &str) -> Result<usize> {
        self.arrays
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("file has no array named '{name}'")))
    }

    /// Reject artifacts written under a different configuration.
    pub fn expect_config(&self, config_hash: u64) -> Result<()> {
        let want = format!("{config_hash:016x}");
        if self.config_hash != want {
            return Err(Error::Format(format!(
                "config hash mismatch: file was written under {}, current config is {want}",
                self.config_hash
            )));
        }
        Ok(())
    }
}

/// Atomically write `bytes` to `path` via a temp file and rename.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Serialize the container: 8-byte little-endian header length, JSON
/// header, then the payload doubles.
pub fn write_container(path: &Path, header: &Header, payload: &[f64]) -> Result<()> {
    if header.declared_len() != payload.len() {
        return Err(Error::Format(format!(
            "declared shapes cover {} values but payload has {}",
            header.declared_len(),
            payload.len()
        )));
    }
    let json = serde_json::to_vec(header)?;
    let mut bytes = Vec::with_capacity(8 + json.len() + payload.len() * 8);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_container(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut file = std::fs::File::open(path)?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    file.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: format version {} unsupported; this build reads version {FORMAT_VERSION} \
             (regenerate the file or upgrade)",
            path.display(),
            header.format_version
        )));
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if rest.len() != header.declared_len() * 8 {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes but the header declares {}",
            path.display(),
            rest.len(),
            header.declared_len() * 8
        )));
    }
    let payload =
        rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

fn extract_array(header: &Header, payload: &[f64], name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let idx = header.array_index(name)?;
    let offset: usize =
        header.arrays[..idx].iter().map(|a| a.shape.iter().product::<usize>()).sum();
    let len = header.arrays[idx].shape.iter().product::<usize>();
    Ok((header.arrays[idx].shape.clone(), payload[offset..offset + len].to_vec()))
}

fn extract_matrix(header: &Header, payload: &[f64], name: &str) -> Result<Array2<f64>> {
    let (shape, data) = extract_array(header, payload, name)?;
    if shape.len() != 2 {
        return Err(Error::Format(format!("array '{name}' is not a matrix")));
    }
    Array2::from_shape_vec((shape[0], shape[1]), data)
        .map_err(|e| Error::Format(format!("array '{name}': {e}")))
}

fn extract_vector(header: &Header, payload: &[f64], name: &str) -> Result<Array1<f64>> {
    let (shape, data) = extract_array(header, payload, name)?;
    if shape.len() != 1 {
        return Err(Error::Format(format!("array '{name}' is not a vector")));
    }
    Ok(Array1::from_vec(data))
}

/// Reference densities and currents for one momentum.
pub fn save_density_trajectory(
    path: &Path,
    grid: &GridSpec,
    stride: usize,
    densities: &Array2<f64>,
    currents: &Array2<f64>,
    momentum: f64,
    packet_width: f64,
    config_hash: u64,
) -> Result<()> {
    let mut header = Header::new("density-trajectory", Some(grid.clone()), config_hash)
        .with_meta("momentum", serde_json::json!(momentum))
        .with_meta("packet_width", serde_json::json!(packet_width))
        .with_meta("stride", serde_json::json!(stride));
    header.declare("densities", &[densities.nrows(), densities.ncols()]);
    header.declare("currents", &[currents.nrows(), currents.ncols()]);
    let mut payload = Vec::with_capacity(densities.len() + currents.len());
    payload.extend(densities.iter());
    payload.extend(currents.iter());
    write_container(path, &header, &payload)
}

pub fn load_density_trajectory(path: &Path) -> Result<(Header, Array2<f64>, Array2<f64>)> {
    let (header, payload) = read_container(path)?;
    let densities = extract_matrix(&header, &payload, "densities")?;
    let currents = extract_matrix(&header, &payload, "currents")?;
    Ok((header, densities, currents))
}

pub fn save_ks_pair(
    path: &Path,
    grid: &GridSpec,
    pair: &KsInitialPair,
    momentum: f64,
    config_hash: u64,
) -> Result<()> {
    let mut header = Header::new("ks-pair", Some(grid.clone()), config_hash)
        .with_meta("momentum", serde_json::json!(momentum))
        .with_meta("dt_used", serde_json::json!(pair.dt_used));
    let n = pair.phi0.len();
    for name in ["phi0_re", "phi0_im", "phi1_re", "phi1_im"] {
        header.declare(name, &[n]);
    }
    let mut payload = Vec::with_capacity(4 * n);
    payload.extend(pair.phi0.iter().map(|z| z.re));
    payload.extend(pair.phi0.iter().map(|z| z.im));
    payload.extend(pair.phi1.iter().map(|z| z.re));
    payload.extend(pair.phi1.iter().map(|z| z.im));
    write_container(path, &header, &payload)
}

pub fn load_ks_pair(path: &Path) -> Result<(Header, KsInitialPair)> {
    let (header, payload) = read_container(path)?;
    let re0 = extract_vector(&header, &payload, "phi0_re")?;
    let im0 = extract_vector(&header, &payload, "phi0_im")?;
    let re1 = extract_vector(&header, &payload, "phi1_re")?;
    let im1 = extract_vector(&header, &payload, "phi1_im")?;
    let dt_used = header
        .meta
        .get("dt_used")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Format("ks-pair file lacks dt_used".into()))?;
    let zip = |re: &Array1<f64>, im: &Array1<f64>| {
        Array1::from_iter(re.iter().zip(im.iter()).map(|(r, i)| Complex64::new(*r, *i)))
    };
    Ok((header, KsInitialPair { phi0: zip(&re0, &im0), phi1: zip(&re1, &im1), dt_used }))
}

/// Trained control plus the manifest needed to rebuild it.
pub fn save_checkpoint(
    path: &Path,
    control: &Control,
    grid: &GridSpec,
    iteration: usize,
    seed: u64,
    config_hash: u64,
) -> Result<()> {
    let mut header = Header::new("checkpoint", Some(grid.clone()), config_hash)
        .with_meta("iteration", serde_json::json!(iteration))
        .with_meta("seed", serde_json::json!(seed))
        .with_meta(
            "selu",
            serde_json::json!({
                "lambda": crate::model::SELU_LAMBDA,
                "alpha": crate::model::SELU_ALPHA,
            }),
        );
    let payload: Vec<f64>;
    match control {
        Control::Pointwise(vc) => {
            header = header.with_meta("control", serde_json::json!("pointwise"));
            header.declare("correlation", &[vc.0.nrows(), vc.0.ncols()]);
            payload = vc.0.iter().copied().collect();
        }
        Control::Functional { params, kind } => {
            let kind_name = match kind {
                ModelKind::PhiMemory => "phi",
                ModelKind::DensityMemory => "density",
            };
            let widths: Vec<usize> = std::iter::once(params.layers[0].0.ncols())
                .chain(params.layers.iter().map(|(w, _)| w.nrows()))
                .collect();
            header = header
                .with_meta("control", serde_json::json!("functional"))
                .with_meta("model_kind", serde_json::json!(kind_name))
                .with_meta("layer_widths", serde_json::json!(widths));
            header.declare("parameters", &[params.flat_len()]);
            payload = params.flatten().to_vec();
        }
    }
    write_container(path, &header, &payload)
}

/// Rebuild dense layers from the canonical flat ordering
/// (per layer: weights row-major, then bias).
pub fn params_from_flat(widths: &[usize], flat: &[f64]) -> Result<MlpParameters> {
    let expected: usize =
        widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
    if flat.len() != expected {
        return Err(Error::Format(format!(
            "parameter payload has {} values, layer widths {widths:?} need {expected}",
            flat.len()
        )));
    }
    let mut layers = Vec::with_capacity(widths.len() - 1);
    let mut off = 0;
    for w in widths.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let weights =
            Array2::from_shape_vec((n_out, n_in), flat[off..off + n_out * n_in].to_vec())
                .unwrap();
        off += n_out * n_in;
        let bias = Array1::from_vec(flat[off..off + n_out].to_vec());
        off += n_out;
        layers.push((weights, bias));
    }
    Ok(MlpParameters { layers })
}

pub fn load_checkpoint(path: &Path) -> Result<(Header, Control)> {
    let (header, payload) = read_container(path)?;
    let control_kind = header
        .meta
        .get("control")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Format("checkpoint lacks a control tag".into()))?;
    let control = match control_kind {
        "pointwise" => {
            let vc = extract_matrix(&header, &payload, "correlation")?;
            Control::Pointwise(CorrelationGrid(vc))
        }
        "functional" => {
            let widths: Vec<usize> = header
                .meta
                .get("layer_widths")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| Error::Format("checkpoint lacks layer widths".into()))?;
            let kind = match header.meta.get("model_kind").and_then(|v| v.as_str()) {
                Some("phi") => ModelKind::PhiMemory,
                Some("density") => ModelKind::DensityMemory,
                other => {
                    return Err(Error::Format(format!(
                        "checkpoint has unknown model kind {other:?}"
                    )))
                }
            };
            let (_, flat) = extract_array(&header, &payload, "parameters")?;
            Control::Functional { params: params_from_flat(&widths, &flat)?, kind }
        }
        other => return Err(Error::Format(format!("unknown control tag '{other}'"))),
    };
    Ok((header, control))
}

/// Write named columns as CSV with 17 significant digits, enough to
/// round-trip doubles exactly.
pub fn export_csv(path: &Path, columns: &[(&str, &Array1<f64>)]) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::Format("CSV export needs at least one column".into()));
    }
    let rows = columns[0].1.len();
    for (name, col) in columns {
        if col.len() != rows {
            return Err(Error::Format(format!(
                "column '{name}' has {} rows, expected {rows}",
                col.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(&columns.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(","));
    out.push('\n');
    for r in 0..rows {
        let line =
            columns.iter().map(|(_, c)| format!("{:.16e}", c[r])).collect::<Vec<_>>().join(",");
        out.push_str(&line);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Streams one line per accepted optimizer iteration to a log file.
pub struct TraceWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::fs::File::create(path)?;
        Ok(Self { file: std::io::BufWriter::new(file) })
    }

    pub fn log(&mut self, rec: &IterRecord) {
        let _ = writeln!(
            self.file,
            "{} {:.16e} {:.16e} {:.16e} {}",
            rec.iter, rec.objective, rec.grad_max, rec.step, rec.evals
        );
        let _ = self.file.flush();
    }
}
