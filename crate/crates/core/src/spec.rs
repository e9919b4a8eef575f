//! JSON chain-spec documents.
//!
//! Explicit chains:
//! `{"type": "discrete", "states": [0, 1], "rows": {"0": [[1, "1"]], "1": [[0, "0.5"], ["DELTA", "0.5"]]}, "absorbing_key": "DELTA"}`.
//! Entries may be JSON numbers or decimal strings; rows of continuous
//! chains hold rates. Gallery references: `{"gallery": "hub", "params": {"q": 0.8, "alpha": 1.25}}`.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::chain::{ContinuousChain, DiscreteChain};
use crate::error::{QsdError, Result};
use crate::gallery::{from_name, GalleryModel, ModelChain};

pub const DEFAULT_ABSORBING_KEY: &str = "DELTA";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    State(i64),
    Cemetery,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitSpec {
    pub kind: Kind,
    pub states: Vec<i64>,
    pub rows: BTreeMap<i64, Vec<(Target, f64)>>,
    pub absorbing_key: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChainSpec {
    Explicit(ExplicitSpec),
    Gallery { name: String, params: BTreeMap<String, f64> },
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub chain: ModelChain,
    pub gallery: Option<GalleryModel>,
}

impl Loaded {
    pub fn discrete(&self) -> Option<&DiscreteChain> {
        match &self.chain {
            ModelChain::Discrete(c) => Some(c),
            ModelChain::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&ContinuousChain> {
        match &self.chain {
            ModelChain::Continuous(c) => Some(c),
            ModelChain::Discrete(_) => None,
        }
    }
}

fn bad(msg: impl Into<String>) -> QsdError {
    QsdError::Spec(msg.into())
}

fn number(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| bad(format!("not a finite number: {n}"))),
        Value::String(s) => s.trim().parse::<f64>().map_err(|_| bad(format!("not a decimal: {s:?}"))),
        other => Err(bad(format!("expected a number, got {other}"))),
    }
}

fn integer(v: &Value) -> Result<i64> {
    match v {
        Value::Number(n) => n.as_i64().ok_or_else(|| bad(format!("state must be an integer: {n}"))),
        Value::String(s) => s.trim().parse::<i64>().map_err(|_| bad(format!("state must be an integer: {s:?}"))),
        other => Err(bad(format!("expected a state, got {other}"))),
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn decimal(x: f64) -> String {
    format!("{x}")
}

impl ChainSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        Self::from_value(&v)
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| bad("spec must be a JSON object"))?;
        if let Some(name) = obj.get("gallery") {
            let name = name.as_str().ok_or_else(|| bad("`gallery` must be a string"))?.to_string();
            let mut params = BTreeMap::new();
            if let Some(p) = obj.get("params") {
                let p = p.as_object().ok_or_else(|| bad("`params` must be an object"))?;
                for (k, val) in p {
                    params.insert(k.clone(), number(val)?);
                }
            }
            return Ok(ChainSpec::Gallery { name, params });
        }
        let kind = match obj.get("type").and_then(Value::as_str) {
            Some("discrete") => Kind::Discrete,
            Some("continuous") => Kind::Continuous,
            Some(other) => return Err(bad(format!("unknown chain type {other:?}"))),
            None => return Err(bad("missing `type` (or `gallery`)")),
        };
        let absorbing_key = match obj.get("absorbing_key") {
            None => DEFAULT_ABSORBING_KEY.to_string(),
            Some(k) => k.as_str().ok_or_else(|| bad("`absorbing_key` must be a string"))?.to_string(),
        };
        let states = obj
            .get("states")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("`states` must be an array"))?
            .iter()
            .map(integer)
            .collect::<Result<Vec<_>>>()?;
        let rows_obj = obj.get("rows").and_then(Value::as_object).ok_or_else(|| bad("`rows` must be an object"))?;
        let mut rows = BTreeMap::new();
        for (from, entries) in rows_obj {
            let from: i64 = from.trim().parse().map_err(|_| bad(format!("row key {from:?} is not a state")))?;
            let entries = entries.as_array().ok_or_else(|| bad(format!("row {from} must be an array")))?;
            let mut out = Vec::with_capacity(entries.len());
            for e in entries {
                let pair = e.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad(format!("row {from}: entries are [target, value] pairs")))?;
                let target = match &pair[0] {
                    Value::String(s) if *s == absorbing_key => Target::Cemetery,
                    t => Target::State(integer(t)?),
                };
                out.push((target, number(&pair[1])?));
            }
            if rows.insert(from, out).is_some() {
                return Err(bad(format!("duplicate row {from}")));
            }
        }
        Ok(ChainSpec::Explicit(ExplicitSpec { kind, states, rows, absorbing_key }))
    }

    pub fn to_value(&self) -> Value {
        match self {
            ChainSpec::Gallery { name, params } => {
                let p: Map<String, Value> = params.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
                json!({"gallery": name, "params": p})
            }
            ChainSpec::Explicit(e) => {
                let rows: Map<String, Value> = e
                    .rows
                    .iter()
                    .map(|(from, entries)| {
                        let list: Vec<Value> = entries
                            .iter()
                            .map(|(t, p)| {
                                let t = match t {
                                    Target::State(s) => json!(s),
                                    Target::Cemetery => json!(e.absorbing_key),
                                };
                                json!([t, decimal(*p)])
                            })
                            .collect();
                        (from.to_string(), Value::Array(list))
                    })
                    .collect();
                json!({
                    "type": match e.kind { Kind::Discrete => "discrete", Kind::Continuous => "continuous" },
                    "states": e.states,
                    "rows": rows,
                    "absorbing_key": e.absorbing_key,
                })
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("spec serializes")
    }

    pub fn build(&self) -> Result<Loaded> {
        match self {
            ChainSpec::Gallery { name, params } => {
                let g = from_name(name, params)?;
                Ok(Loaded { chain: g.chain.clone(), gallery: Some(g) })
            }
            ChainSpec::Explicit(e) => {
                let rows = e
                    .rows
                    .iter()
                    .map(|(from, entries)| {
                        let mut out = Vec::new();
                        let mut kill = 0.0;
                        for (t, p) in entries {
                            match t {
                                Target::State(s) => out.push((*s, *p)),
                                Target::Cemetery => kill += p,
                            }
                        }
                        (*from, out, kill)
                    })
                    .collect();
                let chain = match e.kind {
                    Kind::Discrete => ModelChain::Discrete(DiscreteChain::explicit(e.states.clone(), rows)?),
                    Kind::Continuous => ModelChain::Continuous(ContinuousChain::explicit(e.states.clone(), rows)?),
                };
                Ok(Loaded { chain, gallery: None })
            }
        }
    }
}
