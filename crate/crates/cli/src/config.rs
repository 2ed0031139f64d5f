//! TOML run configuration with explicit defaults and `key=value` overrides.

use std::path::{Path, PathBuf};

use airfunc::applications::{model_to_fmon, AdditiveKernelModel, LipschitzLoss, DEFAULT_GRID};
use airfunc::channel::ChannelConfig;
use airfunc::concentration::DistributionSpec;
use airfunc::fmon::{make_builtin, BuiltinKind, FmonSpec};
use airfunc::montecarlo::{Execution, InputStrategy};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FADING_FAMILIES: &str = "gaussian, rademacher";
pub const NOISE_FAMILIES: &str = "circular-gaussian:<sigma>, uniform:<a>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigBundle {
    pub function: FunctionBlock,
    pub channel: ChannelBlock,
    pub run: RunBlock,
    pub output: OutputBlock,
    pub sweep: SweepBlock,
    pub maxcon: MaxconBlock,
    pub loss: LossBlock,
    pub concentration: ConcentrationBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionBlock {
    /// `sum`, `average`, `pnorm:p`, `lipschitz_linear:B[:lo:hi]` or `model`.
    pub name: String,
    /// Additive kernel model file, required when `name = "model"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Grid size for the range search of model components.
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBlock {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "P")]
    pub p: f64,
    pub fading: String,
    pub noise: String,
    #[serde(rename = "sigma_F")]
    pub sigma_f: f64,
    #[serde(rename = "sigma_N")]
    pub sigma_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub eps: f64,
    pub delta: f64,
    pub trials: u64,
    pub master_seed: u64,
    pub confidence_level: f64,
    pub s_strategy: String,
    pub execution: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub format: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    pub eps: Vec<f64>,
    pub s_strategy: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxconBlock {
    pub m: u64,
    pub d: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBlock {
    /// `hinge` or `absolute[:B]`.
    pub name: String,
    /// Input point for the Monte Carlo check; empty means the domain midpoints.
    pub x: Vec<f64>,
    pub y: f64,
    /// Monte Carlo trials at `M_required`; 0 skips the run.
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationBlock {
    #[serde(rename = "M")]
    pub m: usize,
    pub t: Vec<f64>,
    pub samples: usize,
}

// Raw, partially specified form of the file.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBundle {
    function: Option<RawFunction>,
    channel: Option<RawChannel>,
    run: Option<RawRun>,
    output: Option<RawOutput>,
    sweep: Option<SweepBlock>,
    maxcon: Option<RawMaxcon>,
    loss: Option<RawLoss>,
    concentration: Option<RawConcentration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    name: Option<String>,
    model: Option<PathBuf>,
    grid: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    #[serde(rename = "K")]
    k: Option<usize>,
    #[serde(rename = "M")]
    m: Option<usize>,
    #[serde(rename = "P")]
    p: Option<f64>,
    fading: Option<String>,
    noise: Option<String>,
    #[serde(rename = "sigma_F")]
    sigma_f: Option<f64>,
    #[serde(rename = "sigma_N")]
    sigma_n: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    eps: Option<f64>,
    delta: Option<f64>,
    trials: Option<u64>,
    master_seed: Option<u64>,
    confidence_level: Option<f64>,
    s_strategy: Option<String>,
    execution: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    format: Option<String>,
    path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaxcon {
    m: Option<u64>,
    d: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    name: Option<String>,
    x: Option<Vec<f64>>,
    y: Option<f64>,
    trials: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConcentration {
    #[serde(rename = "M")]
    m: Option<usize>,
    t: Option<Vec<f64>>,
    samples: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn required<T>(v: Option<T>, field: &str) -> Result<T, CliError> {
    v.ok_or_else(|| invalid(format!("missing required field {field}")))
}

/// Reads a config file, applies `key=value` overrides (dotted keys, TOML
/// values; bare words are taken as strings) and materialises every default.
/// Relative model paths are resolved against the config file's directory.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ConfigBundle, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, overrides)
}

pub fn parse_config(text: &str, base_dir: &Path, overrides: &[String]) -> Result<ConfigBundle, CliError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(format!("config: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let raw: RawBundle = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| invalid(format!("config: {e}")))?;
    materialize(raw, base_dir)
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {item:?} is not key=value")))?;
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

pub fn fading_distribution(name: &str) -> Result<DistributionSpec<f64>, CliError> {
    match name {
        "gaussian" => Ok(DistributionSpec::standard_gaussian()),
        "rademacher" => Ok(DistributionSpec::rademacher()),
        other => Err(invalid(format!(
            "channel.fading: unknown family {other:?}; supported: {FADING_FAMILIES}"
        ))),
    }
}

pub fn noise_distribution(name: &str) -> Result<DistributionSpec<f64>, CliError> {
    let bad = || invalid(format!("channel.noise: unknown family {name:?}; supported: {NOISE_FAMILIES}"));
    let (family, param) = name.split_once(':').ok_or_else(bad)?;
    let v: f64 = param.parse().map_err(|_| bad())?;
    let dist = match family {
        "circular-gaussian" => DistributionSpec::gaussian(0.0, v),
        "uniform" => DistributionSpec::uniform(-v, v),
        _ => return Err(bad()),
    };
    dist.map_err(|e| invalid(format!("channel.noise: {e}")))
}

fn materialize(raw: RawBundle, base_dir: &Path) -> Result<ConfigBundle, CliError> {
    let f = raw.function.unwrap_or_default();
    let c = raw.channel.unwrap_or_default();
    let r = raw.run.unwrap_or_default();
    let o = raw.output.unwrap_or_default();
    let mx = raw.maxcon.unwrap_or_default();
    let l = raw.loss.unwrap_or_default();
    let cc = raw.concentration.unwrap_or_default();

    let fading = c.fading.unwrap_or_else(|| "gaussian".into());
    let noise = c.noise.unwrap_or_else(|| "circular-gaussian:1".into());
    let fading_dist = fading_distribution(&fading)?;
    let noise_dist = noise_distribution(&noise)?;
    let model = f.model.map(|p| if p.is_relative() { base_dir.join(p) } else { p });

    let bundle = ConfigBundle {
        function: FunctionBlock {
            name: required(f.name, "function.name")?,
            model,
            grid: f.grid.unwrap_or(DEFAULT_GRID),
        },
        channel: ChannelBlock {
            k: required(c.k, "channel.K")?,
            m: required(c.m, "channel.M")?,
            p: c.p.unwrap_or(1.0),
            sigma_f: c.sigma_f.unwrap_or_else(|| fading_dist.subgauss_tau().unwrap_or(f64::NAN)),
            sigma_n: c.sigma_n.unwrap_or_else(|| noise_dist.subgauss_tau().unwrap_or(f64::NAN)),
            fading,
            noise,
        },
        run: RunBlock {
            eps: required(r.eps, "run.eps")?,
            delta: r.delta.unwrap_or(0.05),
            trials: r.trials.unwrap_or(10_000),
            master_seed: r.master_seed.unwrap_or(0),
            confidence_level: r.confidence_level.unwrap_or(0.95),
            s_strategy: r.s_strategy.unwrap_or_else(|| "all-max".into()),
            execution: r.execution.unwrap_or_else(|| "parallel".into()),
        },
        output: OutputBlock { format: o.format.unwrap_or_else(|| "csv".into()), path: o.path },
        sweep: raw.sweep.unwrap_or_default(),
        maxcon: MaxconBlock { m: mx.m.unwrap_or(4), d: mx.d.unwrap_or(4) },
        loss: LossBlock {
            name: l.name.unwrap_or_else(|| "hinge".into()),
            x: l.x.unwrap_or_default(),
            y: l.y.unwrap_or(1.0),
            trials: l.trials.unwrap_or(0),
        },
        concentration: ConcentrationBlock {
            m: cc.m.unwrap_or(50),
            t: cc.t.unwrap_or_else(|| vec![5.0, 10.0, 20.0, 40.0]),
            samples: cc.samples.unwrap_or(1_000_000),
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

impl ConfigBundle {
    pub fn validate(&self) -> Result<(), CliError> {
        let ch = &self.channel;
        if ch.k == 0 {
            return Err(invalid("channel.K must be at least 1"));
        }
        if ch.m == 0 {
            return Err(invalid("channel.M must be at least 1"));
        }
        if !(ch.p > 0.0 && ch.p.is_finite()) {
            return Err(invalid(format!("channel.P must be positive, got {}", ch.p)));
        }
        let run = &self.run;
        if !(run.eps > 0.0 && run.eps.is_finite()) {
            return Err(invalid(format!("run.eps must be positive, got {}", run.eps)));
        }
        if !(run.delta > 0.0 && run.delta < 1.0) {
            return Err(invalid(format!("run.delta must lie in (0, 1), got {}", run.delta)));
        }
        if run.trials == 0 {
            return Err(invalid("run.trials must be at least 1"));
        }
        if !(run.confidence_level > 0.0 && run.confidence_level < 1.0) {
            return Err(invalid(format!("run.confidence_level must lie in (0, 1), got {}", run.confidence_level)));
        }
        self.execution()?;
        self.input_strategy()?;
        for s in &self.sweep.s_strategy {
            parse_strategy(s, "sweep.s_strategy")?;
        }
        if self.sweep.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("sweep.eps entries must be positive"));
        }
        if self.sweep.m.contains(&0) || self.sweep.k.contains(&0) {
            return Err(invalid("sweep.M and sweep.K entries must be at least 1"));
        }
        if !matches!(self.output.format.as_str(), "csv" | "json") {
            return Err(invalid(format!("output.format must be csv or json, got {:?}", self.output.format)));
        }
        if self.maxcon.m == 0 || self.maxcon.m % 2 != 0 {
            return Err(invalid(format!("maxcon.m must be a positive even integer, got {}", self.maxcon.m)));
        }
        self.loss()?;
        if self.concentration.m == 0 || self.concentration.samples == 0 {
            return Err(invalid("concentration.M and concentration.samples must be at least 1"));
        }
        if self.function.grid < 2 {
            return Err(invalid("function.grid must be at least 2"));
        }
        if self.function.name == "model" {
            let path = self.function.model.as_ref().ok_or_else(|| invalid("function.model is required for name = \"model\""))?;
            if !path.is_file() {
                return Err(invalid(format!("function.model: {} does not exist", path.display())));
            }
        } else {
            self.builtin_kind()?;
        }
        self.channel_config().map(|_| ())
    }

    pub fn builtin_kind(&self) -> Result<BuiltinKind, CliError> {
        self.function.name.parse().map_err(|e| invalid(format!("function.name: {e}")))
    }

    pub fn execution(&self) -> Result<Execution, CliError> {
        match self.run.execution.as_str() {
            "parallel" => Ok(Execution::Parallel),
            "serial" => Ok(Execution::Serial),
            other => Err(invalid(format!("run.execution must be serial or parallel, got {other:?}"))),
        }
    }

    pub fn input_strategy(&self) -> Result<InputStrategy<f64>, CliError> {
        parse_strategy(&self.run.s_strategy, "run.s_strategy")
    }

    pub fn loss(&self) -> Result<LipschitzLoss<f64>, CliError> {
        self.loss.name.parse().map_err(|e| invalid(format!("loss.name: {e}")))
    }

    pub fn channel_config(&self) -> Result<ChannelConfig<f64>, CliError> {
        let ch = &self.channel;
        ChannelConfig::new(
            ch.k,
            ch.m,
            ch.p,
            fading_distribution(&ch.fading)?,
            noise_distribution(&ch.noise)?,
            Some(ch.sigma_f),
            Some(ch.sigma_n),
        )
        .map_err(|e| invalid(format!("channel: {e}")))
    }

    pub fn model(&self) -> Result<AdditiveKernelModel<f64>, CliError> {
        let path = self
            .function
            .model
            .as_ref()
            .ok_or_else(|| invalid("this command needs function.name = \"model\" and function.model"))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("function.model: cannot read {}: {e}", path.display())))?;
        AdditiveKernelModel::from_json(&text).map_err(|e| invalid(format!("function.model: {e}")))
    }

    /// The function for `K` components.
    pub fn spec_for_k(&self, k: usize) -> Result<FmonSpec<f64>, CliError> {
        if self.function.name == "model" {
            let model = self.model()?;
            if model.k() != k {
                return Err(invalid(format!("channel.K = {k} but the model has {} components", model.k())));
            }
            return model_to_fmon(&model, self.function.grid).map_err(|e| invalid(format!("function.model: {e}")));
        }
        make_builtin(self.builtin_kind()?, k).map_err(|e| invalid(format!("function: {e}")))
    }

    pub fn spec(&self) -> Result<FmonSpec<f64>, CliError> {
        self.spec_for_k(self.channel.k)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn parse_strategy(s: &str, field: &str) -> Result<InputStrategy<f64>, CliError> {
    s.parse().map_err(|e| invalid(format!("{field}: {e}")))
}
