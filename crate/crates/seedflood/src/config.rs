//! JSON experiment files: parsing, defaults, sweep expansion and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seedflood_core::model::{LayerShape, TaskConfig, TaskSpec};
use seedflood_core::sim::{
    Method, RunConfig, TopologySpec, DEFAULT_KEEP_FRACTION, DEFAULT_LOCAL_STEPS, DEFAULT_RANK,
    DEFAULT_TAU,
};
use seedflood_core::zo::{PerturbationKind, DEFAULT_EPSILON};
use seedflood_core::{Precision, Seed};

use crate::edges::load_edge_list;

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Seedflood,
    Dsgd,
    Dzsgd,
    Chocosgd,
    #[serde(rename = "gossip-sr")]
    GossipSr,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Method {
        match m {
            MethodName::Seedflood => Method::SeedFlood,
            MethodName::Dsgd => Method::Dsgd,
            MethodName::Dzsgd => Method::Dzsgd,
            MethodName::Chocosgd => Method::ChocoSgd,
            MethodName::GossipSr => Method::GossipSr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyField {
    Ring,
    Path,
    Star,
    Complete,
    Grid {
        rows: usize,
        cols: usize,
    },
    Torus {
        rows: usize,
        cols: usize,
    },
    Random {
        p_extra: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Either a path to an edge-list file (relative to the config file) or an
    /// inline list of `[u, v]` pairs.
    Edges(EdgeSource),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged, expecting = "an edge-list file path or a list of [u, v] pairs")]
pub enum EdgeSource {
    File(PathBuf),
    List(Vec<(usize, usize)>),
}

impl TopologyField {
    fn label(&self) -> String {
        match self {
            TopologyField::Ring => "ring".into(),
            TopologyField::Path => "path".into(),
            TopologyField::Star => "star".into(),
            TopologyField::Complete => "complete".into(),
            TopologyField::Grid { rows, cols } => format!("grid{rows}x{cols}"),
            TopologyField::Torus { rows, cols } => format!("torus{rows}x{cols}"),
            TopologyField::Random { p_extra, .. } => format!("random{p_extra}"),
            TopologyField::Edges(_) => "edges".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Logistic,
    LeastSquares,
    Mlp,
}

/// A task name with default sizes, or an object with `kind` and overrides.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(
    untagged,
    expecting = "a task name (\"logistic\", \"least_squares\", \"mlp\") or an object with a `kind` key"
)]
pub enum TaskField {
    Name(TaskName),
    Detailed(TaskObject),
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TaskObject {
    pub kind: Option<TaskName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_samples: Option<usize>,
}

impl TaskField {
    fn to_config(&self) -> Result<TaskConfig, String> {
        let obj = match self {
            TaskField::Name(kind) => TaskObject {
                kind: Some(*kind),
                ..TaskObject::default()
            },
            TaskField::Detailed(o) => o.clone(),
        };
        let kind = obj.kind.ok_or("task object needs a `kind`")?;
        let reject = |keys: &[(&str, bool)]| -> Result<(), String> {
            match keys.iter().find(|(_, set)| *set) {
                Some((k, _)) => Err(format!("`{k}` does not apply to a {kind:?} task")),
                None => Ok(()),
            }
        };
        let spec = match kind {
            TaskName::Logistic => {
                reject(&[
                    ("outputs", obj.outputs.is_some()),
                    ("inputs", obj.inputs.is_some()),
                    ("noise_std", obj.noise_std.is_some()),
                    ("hidden", obj.hidden.is_some()),
                    ("classes", obj.classes.is_some()),
                ])?;
                TaskSpec::Logistic {
                    rows: obj.rows.unwrap_or(32),
                    cols: obj.cols.unwrap_or(32),
                    bias: obj.bias.unwrap_or(false),
                    label_noise: obj.label_noise.unwrap_or(0.05),
                }
            }
            TaskName::LeastSquares => {
                reject(&[
                    ("rows", obj.rows.is_some()),
                    ("cols", obj.cols.is_some()),
                    ("label_noise", obj.label_noise.is_some()),
                    ("hidden", obj.hidden.is_some()),
                    ("classes", obj.classes.is_some()),
                ])?;
                TaskSpec::LeastSquares {
                    outputs: obj.outputs.unwrap_or(32),
                    inputs: obj.inputs.unwrap_or(64),
                    bias: obj.bias.unwrap_or(false),
                    noise_std: obj.noise_std.unwrap_or(0.0),
                }
            }
            TaskName::Mlp => {
                reject(&[
                    ("rows", obj.rows.is_some()),
                    ("cols", obj.cols.is_some()),
                    ("label_noise", obj.label_noise.is_some()),
                    ("outputs", obj.outputs.is_some()),
                    ("noise_std", obj.noise_std.is_some()),
                    ("bias", obj.bias.is_some()),
                ])?;
                TaskSpec::Mlp {
                    inputs: obj.inputs.unwrap_or(16),
                    hidden: obj.hidden.unwrap_or(32),
                    classes: obj.classes.unwrap_or(4),
                }
            }
        };
        let mut cfg = TaskConfig::new(spec);
        if let Some(s) = obj.train_samples {
            cfg.train_samples = s;
        }
        if let Some(s) = obj.eval_samples {
            cfg.eval_samples = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationName {
    Subcge,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionName {
    F32,
    F64,
}

/// Declares the run keys once and derives both the per-variant override
/// struct and the top-level file struct from the same list.
macro_rules! run_fields {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty $(=> $key:literal)?,)*) => {
        /// Keys of a single run. Every key is optional; unset keys fall back
        /// to the enclosing level and then to the defaults.
        #[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
        #[serde(deny_unknown_fields)]
        pub struct RunFields {
            $(
                $(#[doc = $doc])*
                $(#[serde(rename = $key)])?
                #[serde(default)]
                pub $field: Option<$ty>,
            )*
        }

        /// Top-level layout of an experiment file.
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ExperimentFile {
            $(
                $(#[serde(rename = $key)])?
                #[serde(default)]
                pub $field: Option<$ty>,
            )*
            #[serde(default)]
            pub variants: Option<Vec<RunFields>>,
            #[serde(default)]
            pub sweep: Option<Sweep>,
            #[serde(default)]
            pub seeds: Option<Vec<u64>>,
            #[serde(default)]
            pub out: Option<PathBuf>,
        }

        impl ExperimentFile {
            pub fn base(&self) -> RunFields {
                RunFields { $($field: self.$field.clone(),)* }
            }
        }

        impl RunFields {
            /// Copies every key set in `other`, and records `prefix + key`
            /// as its origin.
            fn overlay(&mut self, other: &RunFields, prefix: &str, origin: &mut Origins) {
                $(
                    if other.$field.is_some() {
                        self.$field = other.$field.clone();
                        origin.set(run_fields!(@key $field $($key)?), prefix);
                    }
                )*
            }
        }
    };
    (@key $field:ident $key:literal) => { $key };
    (@key $field:ident) => { stringify!($field) };
}

run_fields! {
    /// Free-form variant label used in output directory names.
    name: String,
    method: MethodName,
    n: usize,
    topology: TopologyField,
    task: TaskField,
    iterations: usize => "T",
    lr: f64,
    epsilon: f64,
    tau: usize,
    r: usize,
    /// Flood hops per iteration; unset floods the full diameter, 0 disables
    /// communication.
    k: usize,
    local_steps: usize,
    batch_size: usize,
    eval_every: usize,
    seed: u64,
    perturbation: PerturbationName,
    keep_fraction: f64,
    gamma: f64,
    sender_exclusion: bool,
    track_consensus: bool,
    precision: PrecisionName,
}

/// Axes of a sweep; the cartesian product is taken in declaration order.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub method: Option<Vec<MethodName>>,
    #[serde(default)]
    pub topology: Option<Vec<TopologyField>>,
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    #[serde(default)]
    pub r: Option<Vec<usize>>,
    #[serde(default)]
    pub tau: Option<Vec<usize>>,
    #[serde(default)]
    pub lr: Option<Vec<f64>>,
    #[serde(default)]
    pub batch_size: Option<Vec<usize>>,
}

impl Sweep {
    /// Every sweep point as an override plus a name suffix.
    fn points(&self) -> Vec<(RunFields, String)> {
        let mut points = vec![(RunFields::default(), String::new())];
        fn axis<T: Clone>(
            points: Vec<(RunFields, String)>,
            values: &Option<Vec<T>>,
            set: impl Fn(&mut RunFields, T),
            label: impl Fn(&T) -> String,
        ) -> Vec<(RunFields, String)> {
            let Some(values) = values else { return points };
            let mut out = Vec::with_capacity(points.len() * values.len());
            for (fields, name) in &points {
                for v in values {
                    let mut f = fields.clone();
                    set(&mut f, v.clone());
                    out.push((f, format!("{name}-{}", label(v))));
                }
            }
            out
        }
        points = axis(points, &self.method, |f, v| f.method = Some(v), |v| Method::from(*v).name().to_string());
        points = axis(points, &self.topology, |f, v| f.topology = Some(v), TopologyField::label);
        points = axis(points, &self.n, |f, v| f.n = Some(v), |v| format!("n{v}"));
        points = axis(points, &self.k, |f, v| f.k = Some(v), |v| format!("k{v}"));
        points = axis(points, &self.r, |f, v| f.r = Some(v), |v| format!("r{v}"));
        points = axis(points, &self.tau, |f, v| f.tau = Some(v), |v| format!("tau{v}"));
        points = axis(points, &self.lr, |f, v| f.lr = Some(v), |v| format!("lr{v}"));
        points = axis(points, &self.batch_size, |f, v| f.batch_size = Some(v), |v| format!("b{v}"));
        points
    }
}

/// Which file location set each key of a resolved variant.
#[derive(Debug, Clone, Default)]
struct Origins(Vec<(&'static str, String)>);

impl Origins {
    fn set(&mut self, key: &'static str, prefix: &str) {
        self.0.retain(|(k, _)| *k != key);
        self.0.push((key, prefix.to_string()));
    }

    fn path(&self, key: &'static str) -> Option<String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(k, p)| format!("{p}{k}"))
    }
}

/// One fully resolved and validated run.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    /// The resolved keys, every default filled in; written to the manifest.
    pub fields: RunFields,
    pub config: RunConfig,
    pub precision: Precision,
}

/// Everything an experiment file asks for.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: PathBuf,
    pub variants: Vec<Variant>,
    pub out: Option<PathBuf>,
    pub has_sweep: bool,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    /// Replaces both the top-level `seed` and any `seeds` list.
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {location}: {message}")]
    Invalid {
        file: PathBuf,
        location: Location,
        message: String,
    },
}

/// Key path and, when it can be found, the line of a diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub key: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at `{}`", self.key)?;
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, " (line {l}, column {c})"),
            (Some(l), None) => write!(f, " (line {l})"),
            _ => write!(f, " (default value)"),
        }
    }
}

impl ConfigError {
    pub fn location(&self) -> Option<&Location> {
        match self {
            ConfigError::Invalid { location, .. } => Some(location),
            ConfigError::Io { .. } => None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_file(path: &Path, overrides: Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            file: path.to_path_buf(),
            source,
        })?;
        Self::from_str(&text, path, overrides)
    }

    /// Parses `text` as if read from `path`; relative edge-list paths resolve
    /// against the directory of `path`.
    pub fn from_str(text: &str, path: &Path, overrides: Overrides) -> Result<Self, ConfigError> {
        let file = path.to_path_buf();
        let mut de = serde_json::Deserializer::from_str(text);
        let parsed: ExperimentFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Invalid {
                file: file.clone(),
                location: Location {
                    key: if key == "." { "<root>".into() } else { key },
                    line: Some(inner.line()),
                    column: Some(inner.column()),
                },
                message: strip_position(&inner.to_string()),
            }
        })?;
        let invalid = |key: String, message: String| {
            let line = locate(text, &key);
            ConfigError::Invalid {
                file: file.clone(),
                location: Location { key, line, column: None },
                message,
            }
        };

        let base_dir = path.parent().unwrap_or(Path::new("."));
        let mut base_origin = Origins::default();
        let mut base = RunFields::default();
        base.overlay(&parsed.base(), "", &mut base_origin);

        let layers: Vec<(RunFields, String)> = match &parsed.variants {
            None => vec![(RunFields::default(), String::new())],
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, v)| (v.clone(), format!("variants[{i}].")))
                .collect(),
        };
        let points = match &parsed.sweep {
            Some(s) => s.points(),
            None => vec![(RunFields::default(), String::new())],
        };
        let seeds: Vec<Option<u64>> = match (overrides.seed, &parsed.seeds) {
            (Some(s), _) => vec![Some(s)],
            (None, Some(list)) => list.iter().map(|&s| Some(s)).collect(),
            (None, None) => vec![None],
        };
        if let Some(s) = overrides.seed {
            base.seed = Some(s);
        }

        let mut variants = Vec::new();
        for (layer, prefix) in &layers {
            for (point, suffix) in &points {
                for seed in &seeds {
                    let mut origin = base_origin.clone();
                    let mut fields = base.clone();
                    fields.overlay(layer, prefix, &mut origin);
                    fields.overlay(point, "sweep.", &mut origin);
                    if let Some(s) = seed {
                        fields.seed = Some(*s);
                        origin.set("seed", if overrides.seed.is_some() { "--" } else { "seeds." });
                    }
                    let index = variants.len();
                    let variant = resolve(fields, base_dir, &origin, index, suffix, seeds.len() > 1)
                        .map_err(|(key, msg)| {
                            let key = origin.path(key).unwrap_or_else(|| key.to_string());
                            invalid(key, msg)
                        })?;
                    variants.push(variant);
                }
            }
        }
        Ok(ExperimentSpec {
            source: file,
            variants,
            out: parsed.out,
            has_sweep: parsed.sweep.is_some(),
        })
    }
}

/// serde_json appends " at line X column Y"; the location is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn resolve(
    mut f: RunFields,
    base_dir: &Path,
    origin: &Origins,
    index: usize,
    suffix: &str,
    many_seeds: bool,
) -> Result<Variant, (&'static str, String)> {
    let method = f.method.ok_or(("method", "missing required key".to_string()))?;
    let n = f.n.ok_or(("n", "missing required key".to_string()))?;
    let topology = f
        .topology
        .clone()
        .ok_or(("topology", "missing required key".to_string()))?;
    let task_field = f.task.clone().unwrap_or(TaskField::Name(TaskName::Logistic));
    let task = task_field.to_config().map_err(|m| ("task", m))?;

    let topology_spec = match &topology {
        TopologyField::Ring => TopologySpec::Ring,
        TopologyField::Path => TopologySpec::Path,
        TopologyField::Star => TopologySpec::Star,
        TopologyField::Complete => TopologySpec::Complete,
        TopologyField::Grid { rows, cols } => TopologySpec::Grid { rows: *rows, cols: *cols },
        TopologyField::Torus { rows, cols } => TopologySpec::Torus { rows: *rows, cols: *cols },
        TopologyField::Random { p_extra, seed } => TopologySpec::Random {
            p_extra: *p_extra,
            seed: seed.map(Seed),
        },
        TopologyField::Edges(src) => {
            let edges = match src {
                EdgeSource::List(list) => list.clone(),
                EdgeSource::File(p) => {
                    load_edge_list(&base_dir.join(p)).map_err(|e| ("topology", e.to_string()))?
                }
            };
            f.topology = Some(TopologyField::Edges(EdgeSource::List(edges.clone())));
            TopologySpec::Edges(edges)
        }
    };

    let mut cfg = RunConfig::new(method.into(), n, topology_spec, task);
    cfg.iterations = f.iterations.unwrap_or(DEFAULT_ITERATIONS);
    cfg.learning_rate = f.lr.unwrap_or(DEFAULT_LEARNING_RATE);
    cfg.epsilon = f.epsilon.unwrap_or(DEFAULT_EPSILON);
    cfg.tau = f.tau.unwrap_or(DEFAULT_TAU.min(cfg.iterations));
    // an unset rank is capped so it fits the smallest weight matrix
    cfg.rank = f.r.unwrap_or_else(|| {
        cfg.task
            .spec
            .layer_shapes()
            .iter()
            .filter_map(|s| match *s {
                LayerShape::Matrix { rows, cols } => Some(rows.min(cols)),
                LayerShape::Vector { .. } => None,
            })
            .fold(DEFAULT_RANK, usize::min)
    });
    cfg.hops = f.k;
    cfg.local_steps = f.local_steps.unwrap_or(DEFAULT_LOCAL_STEPS);
    cfg.batch_size = f.batch_size.unwrap_or(DEFAULT_BATCH_SIZE);
    cfg.eval_every = f.eval_every;
    cfg.seed = Seed(f.seed.unwrap_or(0));
    cfg.perturbation = f.perturbation.map(|p| match p {
        PerturbationName::Subcge => PerturbationKind::SubCge,
        PerturbationName::Gaussian => PerturbationKind::FullGaussian,
    });
    cfg.keep_fraction = f.keep_fraction.unwrap_or(DEFAULT_KEEP_FRACTION);
    cfg.consensus_step = f.gamma.unwrap_or(1.0);
    cfg.sender_exclusion = f.sender_exclusion.unwrap_or(false);
    cfg.track_consensus = f.track_consensus.unwrap_or(false);
    let precision = match f.precision.unwrap_or(PrecisionName::F64) {
        PrecisionName::F32 => Precision::F32,
        PrecisionName::F64 => Precision::F64,
    };

    if let Err(e) = cfg.validate() {
        let msg = e.to_string();
        return Err((blame(&msg, origin), msg));
    }

    // write back every default so the manifest is a complete, rerunnable config
    f.method = Some(method);
    f.n = Some(n);
    f.task = Some(TaskField::Detailed(task_object(&cfg.task)));
    f.iterations = Some(cfg.iterations);
    f.lr = Some(cfg.learning_rate);
    f.epsilon = Some(cfg.epsilon);
    f.tau = Some(cfg.tau);
    f.r = Some(cfg.rank);
    f.local_steps = Some(cfg.local_steps);
    f.batch_size = Some(cfg.batch_size);
    f.eval_every = Some(cfg.eval_cadence());
    f.seed = Some(cfg.seed.0);
    f.perturbation = Some(match cfg.perturbation_kind() {
        PerturbationKind::SubCge => PerturbationName::Subcge,
        PerturbationKind::FullGaussian => PerturbationName::Gaussian,
    });
    f.keep_fraction = Some(cfg.keep_fraction);
    f.gamma = Some(cfg.consensus_step);
    f.sender_exclusion = Some(cfg.sender_exclusion);
    f.track_consensus = Some(cfg.track_consensus);
    f.precision = Some(match precision {
        Precision::F32 => PrecisionName::F32,
        Precision::F64 => PrecisionName::F64,
    });

    let mut name = format!("{index:03}-");
    match &f.name {
        Some(label) => name.push_str(label),
        None => name.push_str(cfg.method.name()),
    }
    name.push_str(suffix);
    if many_seeds {
        name.push_str(&format!("-seed{}", cfg.seed.0));
    }
    let name = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    Ok(Variant {
        name,
        fields: f,
        config: cfg,
        precision,
    })
}

fn task_object(task: &TaskConfig) -> TaskObject {
    let mut o = TaskObject {
        train_samples: Some(task.train_samples),
        eval_samples: Some(task.eval_samples),
        ..TaskObject::default()
    };
    match task.spec {
        TaskSpec::Logistic { rows, cols, bias, label_noise } => {
            o.kind = Some(TaskName::Logistic);
            o.rows = Some(rows);
            o.cols = Some(cols);
            o.bias = Some(bias);
            o.label_noise = Some(label_noise);
        }
        TaskSpec::LeastSquares { outputs, inputs, bias, noise_std } => {
            o.kind = Some(TaskName::LeastSquares);
            o.outputs = Some(outputs);
            o.inputs = Some(inputs);
            o.bias = Some(bias);
            o.noise_std = Some(noise_std);
        }
        TaskSpec::Mlp { inputs, hidden, classes } => {
            o.kind = Some(TaskName::Mlp);
            o.inputs = Some(inputs);
            o.hidden = Some(hidden);
            o.classes = Some(classes);
        }
    }
    o
}

/// Maps a validation message to the key most likely responsible.
fn blame(msg: &str, origin: &Origins) -> &'static str {
    const RULES: [(&str, &str); 14] = [
        ("flood hops k", "k"),
        ("ceil(D/k)", "k"),
        ("tau", "tau"),
        ("T must", "T"),
        ("grid", "topology"),
        ("topology", "topology"),
        ("p_extra", "topology"),
        ("rank", "r"),
        ("learning rate", "lr"),
        ("epsilon", "epsilon"),
        ("batch size", "batch_size"),
        ("keep fraction", "keep_fraction"),
        ("consensus step", "gamma"),
        ("local_steps", "local_steps"),
    ];
    if msg.contains("subcge") {
        return if origin.path("perturbation").is_some() { "perturbation" } else { "method" };
    }
    if msg.contains("clients") || msg.contains("n must") {
        return "n";
    }
    if msg.starts_with("invalid configuration") || msg.starts_with("invalid topology") {
        if let Some((_, key)) = RULES.iter().find(|(pat, _)| msg.contains(pat)) {
            return key;
        }
        return if msg.starts_with("invalid topology") { "topology" } else { "method" };
    }
    "task"
}

/// 1-based line of the value at a key path such as `variants[1].k`.
pub fn locate(src: &str, path: &str) -> Option<usize> {
    let mut segments = Vec::new();
    for part in path.split('.') {
        let mut rest = part;
        if let Some(i) = rest.find('[') {
            if i > 0 {
                segments.push(Segment::Key(&rest[..i]));
            }
            rest = &rest[i..];
            while let Some(stripped) = rest.strip_prefix('[') {
                let end = stripped.find(']')?;
                segments.push(Segment::Index(stripped[..end].parse().ok()?));
                rest = &stripped[end + 1..];
            }
        } else if !rest.is_empty() {
            segments.push(Segment::Key(rest));
        }
    }
    let mut w = Walker { b: src.as_bytes(), i: 0 };
    let pos = w.find(&segments)?;
    Some(1 + src.as_bytes()[..pos].iter().filter(|&&c| c == b'\n').count())
}

enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

/// Just enough of a JSON reader to find where a value starts.
struct Walker<'a> {
    b: &'a [u8],
    i: usize,
}

impl<'a> Walker<'a> {
    fn ws(&mut self) {
        while self.i < self.b.len() && self.b[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> Option<()> {
        self.ws();
        (self.b.get(self.i) == Some(&c)).then(|| self.i += 1)
    }

    fn string(&mut self) -> Option<&'a [u8]> {
        self.eat(b'"')?;
        let start = self.i;
        while self.i < self.b.len() {
            match self.b[self.i] {
                b'\\' => self.i += 2,
                b'"' => {
                    self.i += 1;
                    return Some(&self.b[start..self.i - 1]);
                }
                _ => self.i += 1,
            }
        }
        None
    }

    fn skip_value(&mut self) -> Option<()> {
        self.ws();
        match *self.b.get(self.i)? {
            b'"' => self.string().map(|_| ()),
            b'{' | b'[' => {
                let mut depth = 0usize;
                loop {
                    match *self.b.get(self.i)? {
                        b'"' => {
                            self.string()?;
                            continue;
                        }
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                self.i += 1;
                                return Some(());
                            }
                        }
                        _ => {}
                    }
                    self.i += 1;
                }
            }
            _ => {
                while self.i < self.b.len() && !b",}] \t\r\n".contains(&self.b[self.i]) {
                    self.i += 1;
                }
                Some(())
            }
        }
    }

    fn find(&mut self, path: &[Segment<'_>]) -> Option<usize> {
        self.ws();
        let Some((first, rest)) = path.split_first() else {
            return Some(self.i);
        };
        match first {
            Segment::Key(key) => {
                self.eat(b'{')?;
                loop {
                    let k = self.string()?;
                    self.eat(b':')?;
                    if k == key.as_bytes() {
                        return self.find(rest);
                    }
                    self.skip_value()?;
                    self.eat(b',')?;
                }
            }
            Segment::Index(n) => {
                self.eat(b'[')?;
                for _ in 0..*n {
                    self.skip_value()?;
                    self.eat(b',')?;
                }
                self.find(rest)
            }
        }
    }
}
