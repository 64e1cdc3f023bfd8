//! Run configuration. Every field has a default, so `{}` is a complete
//! config that reproduces the shipped setup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use afferentsim::fem::{ContactModel, Indenter};
use afferentsim::mesh::{GeometrySpec, MaterialLayer};
use afferentsim::neural::AfferentParams;
use afferentsim::optimize::{Bound, Nsga2Config, ParameterSpace};
use afferentsim::stimulus::Protocol;
use afferentsim::{AfferentType, Error, PerAfferent, DEFAULT_DT_MS};
use anyhow::Context as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndenterConfig {
    pub diameter_mm: f64,
    pub center_x_mm: f64,
    /// Static depth under the vibration.
    pub pre_indentation_mm: f64,
}

impl Default for IndenterConfig {
    fn default() -> Self {
        IndenterConfig {
            diameter_mm: 1.0,
            center_x_mm: 0.0,
            pre_indentation_mm: 0.0,
        }
    }
}

impl IndenterConfig {
    pub fn indenter(&self) -> Indenter {
        Indenter {
            diameter_mm: self.diameter_mm,
            center_x_mm: self.center_x_mm,
        }
    }
}

/// Where the neural parameters come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamsSource {
    #[default]
    Table2,
    /// JSON object keyed by `SA`, `RA`, `PC`, as written by `fit`.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub optimizer: Nsga2Config,
    /// Per-afferent overrides of the search bounds.
    pub bounds: BTreeMap<AfferentType, Vec<Bound>>,
}

impl FitConfig {
    pub fn space(&self, afferent: AfferentType) -> ParameterSpace {
        let mut space = ParameterSpace::default_for(afferent);
        if let Some(b) = self.bounds.get(&afferent) {
            space.bounds = b.clone();
        }
        space
    }
}

/// Static probe case compared against the measured surface deflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub probe_diameter_mm: f64,
    pub indentation_mm: f64,
    pub interval_mm: f64,
    /// Checks cover `|x − center| ≤ extent`.
    pub extent_mm: f64,
    pub max_deflection_range_mm: [f64; 2],
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            probe_diameter_mm: 0.05,
            indentation_mm: 1.0,
            interval_mm: 0.5,
            extent_mm: 5.0,
            max_deflection_range_mm: [0.9, 1.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    /// One entry per geometry layer, surface first.
    pub materials: Vec<MaterialLayer>,
    /// Load this mesh instead of generating one from `geometry`.
    pub mesh_file: Option<PathBuf>,
    pub indenter: IndenterConfig,
    pub contact: ContactModel,
    pub dt_ms: f64,
    /// `appendixA`, `appendixB`, `appendixC` or a protocol JSON path.
    pub protocol: String,
    pub params: ParamsSource,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub fit: FitConfig,
    pub validation: ValidationConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometrySpec::default(),
            materials: MaterialLayer::soft_tissue_layers(),
            mesh_file: None,
            indenter: IndenterConfig::default(),
            contact: ContactModel::default(),
            dt_ms: DEFAULT_DT_MS,
            protocol: "appendixA".into(),
            params: ParamsSource::Table2,
            seed: 0,
            output_dir: PathBuf::from("out"),
            fit: FitConfig::default(),
            validation: ValidationConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(Error::from)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn load_protocol(&self) -> anyhow::Result<Protocol> {
        if let Some(p) = Protocol::builtin(&self.protocol) {
            return Ok(p);
        }
        let path = self.resolve(Path::new(&self.protocol));
        if !path.is_file() {
            return Err(Error::Validation {
                field: "protocol".into(),
                reason: format!(
                    "`{}` is neither a built-in protocol nor a file",
                    self.protocol
                ),
            }
            .into());
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("protocol");
        Ok(Protocol::from_json(name, &text)?)
    }

    pub fn load_params(&self) -> anyhow::Result<PerAfferent<AfferentParams>> {
        let params = match &self.params {
            ParamsSource::Table2 => PerAfferent::from_fn(AfferentParams::table2),
            ParamsSource::File(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading params {}", path.display()))?;
                serde_json::from_str(&text)
                    .map_err(Error::from)
                    .with_context(|| format!("parsing params {}", path.display()))?
            }
        };
        for (a, p) in params.iter() {
            if p.afferent != a {
                return Err(Error::AfferentMismatch {
                    expected: a.to_string(),
                    got: p.afferent.to_string(),
                }
                .into());
            }
            p.validate().with_context(|| format!("params.{a}"))?;
        }
        Ok(params)
    }

    /// Checks the config and everything it references.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.geometry.validate()?;
        if self.mesh_file.is_none()
            && self.materials.len() != self.geometry.layer_thickness_mm.len()
        {
            return Err(invalid(
                "materials",
                format!(
                    "{} materials for {} geometry layers",
                    self.materials.len(),
                    self.geometry.layer_thickness_mm.len()
                ),
            ));
        }
        for (i, m) in self.materials.iter().enumerate() {
            m.validate(&format!("materials[{i}]"))?;
        }
        if let Some(p) = &self.mesh_file {
            if !self.resolve(p).is_file() {
                return Err(invalid(
                    "mesh_file",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        let ind = &self.indenter;
        if !(ind.diameter_mm.is_finite() && ind.diameter_mm > 0.0) {
            return Err(invalid("indenter.diameter_mm", "must be finite and > 0"));
        }
        if !(ind.center_x_mm.is_finite() && ind.pre_indentation_mm.is_finite()) {
            return Err(invalid(
                "indenter",
                "center_x_mm and pre_indentation_mm must be finite",
            ));
        }
        if !(self.dt_ms.is_finite() && self.dt_ms > 0.0) {
            return Err(invalid("dt_ms", "must be finite and > 0"));
        }
        let protocol = self.load_protocol()?;
        for (i, s) in protocol.stimuli.iter().enumerate() {
            if (s.dt_ms - self.dt_ms).abs() > 1e-12 {
                return Err(invalid(
                    format!("protocol.stimuli[{i}].dt_ms"),
                    format!("{} ms differs from dt_ms = {} ms", s.dt_ms, self.dt_ms),
                ));
            }
        }
        self.load_params()?;
        self.fit.optimizer.validate()?;
        for a in self.fit.bounds.keys() {
            self.fit.space(*a).validate()?;
        }
        let v = &self.validation;
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(v.probe_diameter_mm) && positive(v.interval_mm) && positive(v.extent_mm)) {
            return Err(invalid(
                "validation",
                "probe_diameter_mm, interval_mm and extent_mm must be > 0",
            ));
        }
        if !v.indentation_mm.is_finite() || v.indentation_mm < 0.0 {
            return Err(invalid(
                "validation.indentation_mm",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    /// Canonical JSON of everything that affects outputs.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> anyhow::Error {
    Error::Validation {
        field: field.into(),
        reason: reason.into(),
    }
    .into()
}
