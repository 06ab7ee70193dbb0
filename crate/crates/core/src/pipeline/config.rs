use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{parse_kv, read_text, render_kv};
use crate::net::FusionConfig;
use crate::solver::PriorKind;
use crate::tensor::AdamConfig;

/// Flat run configuration shared by every command. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: FusionConfig,
    pub adam: AdamConfig,
    pub batch: usize,
    pub iterations: u64,
    pub log_every: u64,
    /// Evaluate on the test split every this many steps; 0 evaluates only at the end.
    pub eval_every: u64,

    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Scene id for `fuse` and `baseline`; empty means every test scene.
    pub scene: String,
    pub dump_png: bool,

    /// Comma-separated HSC cubes; empty means synthetic scenes.
    pub inputs: Vec<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
    pub test_count: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    pub response: Option<PathBuf>,
    /// `direct` simulates from the reference, `wald` degrades the simulated pair once more.
    pub protocol: String,
    /// 0 keeps whole training scenes.
    pub patch_size: usize,
    pub patch_stride: usize,
    pub patches_per_scene: usize,

    pub lambda: f64,
    pub prior: PriorKind,
    pub solver_iters: usize,
    /// 0 selects `1/L`.
    pub solver_eta: f64,
    pub solver_tol: f64,

    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: FusionConfig::default(),
            adam: AdamConfig::default(),
            batch: 8,
            iterations: 1000,
            log_every: 10,
            eval_every: 0,
            out: PathBuf::from("out"),
            manifest: None,
            checkpoint: None,
            resume: None,
            scene: String::new(),
            dump_png: false,
            inputs: Vec::new(),
            synthetic_count: 4,
            synthetic_size: 64,
            test_count: 1,
            kernel_size: 8,
            sigma: 2.0,
            response: None,
            protocol: "direct".to_string(),
            patch_size: 0,
            patch_stride: 16,
            patches_per_scene: 8,
            lambda: 0.0,
            prior: PriorKind::None,
            solver_iters: 1000,
            solver_eta: 0.0,
            solver_tol: 1e-8,
            explicit: BTreeSet::new(),
        }
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v) in parse_kv(&read_text(path)?).map_err(|e| Error::config(format!("{}: {e}", path.display())))? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    /// Was `key` given explicitly (file or flag) rather than defaulted?
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::config(format!("{key}: expected true or false, got '{v}'"))),
            }
        }
        if !self.net.set(key, value)? {
            match key {
                "lr" => self.adam.lr = num(key, value)?,
                "beta1" => self.adam.beta1 = num(key, value)?,
                "beta2" => self.adam.beta2 = num(key, value)?,
                "eps" => self.adam.eps = num(key, value)?,
                "batch" => self.batch = num(key, value)?,
                "iterations" => self.iterations = num(key, value)?,
                "log_every" => self.log_every = num(key, value)?,
                "eval_every" => self.eval_every = num(key, value)?,
                "out" => self.out = PathBuf::from(value),
                "manifest" => self.manifest = opt_path(value),
                "checkpoint" => self.checkpoint = opt_path(value),
                "resume" => self.resume = opt_path(value),
                "scene" => self.scene = value.to_string(),
                "dump_png" => self.dump_png = flag(key, value)?,
                "inputs" => {
                    self.inputs = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
                }
                "synthetic_count" => self.synthetic_count = num(key, value)?,
                "synthetic_size" => self.synthetic_size = num(key, value)?,
                "test_count" => self.test_count = num(key, value)?,
                "kernel_size" => self.kernel_size = num(key, value)?,
                "sigma" => self.sigma = num(key, value)?,
                "response" => self.response = opt_path(value),
                "protocol" => match value {
                    "direct" | "wald" => self.protocol = value.to_string(),
                    _ => return Err(Error::config(format!("protocol must be direct or wald, got '{value}'"))),
                },
                "patch_size" => self.patch_size = num(key, value)?,
                "patch_stride" => self.patch_stride = num(key, value)?,
                "patches_per_scene" => self.patches_per_scene = num(key, value)?,
                "lambda" => self.lambda = num(key, value)?,
                "prior" => self.prior = PriorKind::parse(value)?,
                "solver_iters" => self.solver_iters = num(key, value)?,
                "solver_eta" => self.solver_eta = num(key, value)?,
                "solver_tol" => self.solver_tol = num(key, value)?,
                _ => return Err(Error::config(format!("unknown config key '{key}'"))),
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self.net.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        let rest: Vec<(&str, String)> = vec![
            ("lr", format!("{:?}", self.adam.lr)),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("eps", format!("{:?}", self.adam.eps)),
            ("batch", self.batch.to_string()),
            ("iterations", self.iterations.to_string()),
            ("log_every", self.log_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("out", self.out.display().to_string()),
            ("manifest", show_path(&self.manifest)),
            ("checkpoint", show_path(&self.checkpoint)),
            ("resume", show_path(&self.resume)),
            ("scene", self.scene.clone()),
            ("dump_png", self.dump_png.to_string()),
            ("inputs", inputs.join(",")),
            ("synthetic_count", self.synthetic_count.to_string()),
            ("synthetic_size", self.synthetic_size.to_string()),
            ("test_count", self.test_count.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("sigma", format!("{:?}", self.sigma)),
            ("response", show_path(&self.response)),
            ("protocol", self.protocol.clone()),
            ("patch_size", self.patch_size.to_string()),
            ("patch_stride", self.patch_stride.to_string()),
            ("patches_per_scene", self.patches_per_scene.to_string()),
            ("lambda", format!("{:?}", self.lambda)),
            ("prior", self.prior.as_str().to_string()),
            ("solver_iters", self.solver_iters.to_string()),
            ("solver_eta", format!("{:?}", self.solver_eta)),
            ("solver_tol", format!("{:?}", self.solver_tol)),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    /// Every key with its effective value, in a stable order.
    pub fn render(&self) -> String {
        render_kv(&self.to_pairs())
    }

    /// Writes `config.resolved` into the output directory.
    pub fn write_resolved(&self) -> Result<()> {
        crate::io::write_text(&self.out.join("config.resolved"), &self.render())
    }
}
