use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::{json, Value};

use qsd_core::analytics::{critical_parameter, CriticalEstimate, Regime, Schedule};
use qsd_core::cts::cts_critical;
use qsd_core::gallery::{GalleryModel, HubTwoSpokes, ModelChain};
use qsd_core::spec::{ChainSpec, Loaded};
use qsd_core::QsdError;

use crate::Failure;

/// Where the chain comes from: a spec file or a gallery name with parameters.
#[derive(Args, Debug, Clone)]
pub struct Source {
    /// Chain-spec JSON file.
    #[arg(long, conflicts_with = "gallery")]
    pub spec: Option<PathBuf>,
    /// Gallery model: hub, cyclic, killed-walk, killed-ring, branching, discrete-bd, bd.
    #[arg(long)]
    pub gallery: Option<String>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub up: Option<f64>,
    #[arg(long)]
    pub point: Option<f64>,
    #[arg(long)]
    pub geometric: Option<f64>,
    /// Extra gallery parameter as key=value (repeatable).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Largest window for truncations.
    #[arg(long, default_value_t = 400)]
    pub window: usize,
    /// Comma-separated window schedule for limits.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Vec<usize>,
}

pub struct Model {
    pub loaded: Loaded,
    pub inputs: Value,
    pub schedule: Schedule,
    pub window: usize,
}

impl Source {
    fn gallery_params(&self) -> Result<BTreeMap<String, f64>> {
        let mut p = BTreeMap::new();
        for (k, v) in [
            ("q", self.q),
            ("alpha", self.alpha),
            ("eps", self.eps),
            ("rho", self.rho),
            ("up", self.up),
            ("point", self.point),
            ("geometric", self.geometric),
        ] {
            if let Some(v) = v {
                p.insert(k.to_string(), v);
            }
        }
        for kv in &self.params {
            let (k, v) = kv.split_once('=').ok_or_else(|| Failure::validation(format!("--param expects KEY=VALUE, got {kv:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| Failure::validation(format!("--param {k}: {v:?} is not a number")))?;
            p.insert(k.trim().to_string(), v);
        }
        Ok(p)
    }

    pub fn load(&self) -> Result<Model> {
        let (spec, inputs) = match (&self.spec, &self.gallery) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::validation(format!("reading {}: {e}", path.display())))?;
                (ChainSpec::parse(&text)?, json!({"spec": path.display().to_string()}))
            }
            (None, Some(name)) => {
                let params = self.gallery_params()?;
                (ChainSpec::Gallery { name: name.clone(), params: params.clone() }, json!({"gallery": name, "params": params}))
            }
            (None, None) => return Err(Failure::validation("one of --spec or --gallery is required").into()),
        };
        let loaded = spec.build()?;
        if let ModelChain::Discrete(c) = &loaded.chain {
            if c.is_finite() {
                let n = c.enumeration().len().unwrap_or(0);
                qsd_core::chain::validate(c, n)?;
            }
        }
        let schedule = if self.schedule.is_empty() {
            match &loaded.chain {
                ModelChain::Discrete(c) if c.is_finite() => Schedule::new(vec![c.enumeration().len().unwrap_or(1)]),
                _ => Schedule::default(),
            }
        } else {
            Schedule::new(self.schedule.clone())
        };
        Ok(Model { loaded, inputs, schedule, window: self.window })
    }
}

impl Model {
    pub fn gallery(&self) -> Option<&GalleryModel> {
        self.loaded.gallery.as_ref()
    }

    pub fn critical(&self) -> Result<CriticalEstimate> {
        Ok(match &self.loaded.chain {
            ModelChain::Discrete(c) => critical_parameter(c, &self.schedule)?,
            ModelChain::Continuous(c) => cts_critical(c, &self.schedule)?,
        })
    }

    /// `lambda_0` in closed form, where the gallery defines one.
    pub fn lambda0(&self) -> Result<f64> {
        let g = self.gallery().ok_or_else(|| Failure::validation("`l0` needs a gallery model"))?;
        if g.name == "hub" {
            let h = HubTwoSpokes::new(g.params["q"], g.params["alpha"])?;
            return Ok(h.lambda0());
        }
        match g.oracle.lambda_min() {
            Some(l) if l > 0.0 => Ok(l),
            _ => Err(Failure::validation(format!("no closed-form lambda_0 for `{}`", g.name)).into()),
        }
    }

    /// Parses a literal, `lcr` or `l0`.
    pub fn lambda(&self, text: &str) -> Result<f64> {
        match text {
            "lcr" => {
                let c = self.critical()?;
                Ok(0.5 * (c.bracket.0 + c.bracket.1))
            }
            "l0" => self.lambda0(),
            lit => match lit.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => bail!(Failure::validation(format!("bad --lambda {lit:?}"))),
            },
        }
    }
}

pub fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::FiniteMgf => "finite",
        Regime::InfiniteMgf => "infinite",
        Regime::Undetermined => "undetermined",
    }
}

pub fn read_qsd_csv(path: &PathBuf) -> Result<Vec<(qsd_core::StateId, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Failure::validation(format!("{e:#}")))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        let bad = || Failure::validation(format!("{}: rows must be state,weight", path.display()));
        let s: i64 = rec.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let w: f64 = rec.get(1).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        out.push((qsd_core::StateId(s), w));
    }
    if out.is_empty() {
        return Err(QsdError::Spec(format!("{}: no weights", path.display())).into());
    }
    Ok(out)
}
