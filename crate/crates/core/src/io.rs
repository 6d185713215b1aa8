//! File formats: JSONL datasets, model JSON, and the ground-truth sidecar.
//!
//! Output is bit-specified: UTF-8, LF line endings, fixed field order, and
//! reals rendered with 17 significant digits so files are byte-reproducible
//! and round-trip exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::{ContextVector, LinkKind, PositionBiasModel};
use crate::simulator::{ImpressionRecord, Intervention, SimConfig};

/// Renders a real with 17 significant digits; round-trips exactly through
/// any correctly rounding parser.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a JSON value with insertion-order keys and `fmt_real` floats.
pub fn write_json_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_real(n.as_f64().expect("numeric JSON value")));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push(':');
                write_json_value(v, out);
            }
            out.push('}');
        }
    }
}

/// `write_json_value` plus a trailing newline, to a file.
pub fn write_json_file(path: &Path, value: &Value) -> Result<()> {
    let mut s = String::new();
    write_json_value(value, &mut s);
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn dataset_line(rec: &ImpressionRecord) -> String {
    let ctx: Vec<String> = rec.context.values().iter().map(|v| fmt_real(*v)).collect();
    format!(
        "{{\"session_id\":{},\"context\":[{}],\"item_id\":{},\"rank\":{},\"viewed\":{},\"clicked\":{}}}",
        rec.session_id,
        ctx.join(","),
        rec.item_id,
        rec.rank,
        rec.viewed as u8,
        rec.clicked as u8,
    )
}

/// One record per line, fields in fixed order, LF endings.
pub fn write_dataset_jsonl(path: &Path, records: &[ImpressionRecord]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for rec in records {
        w.write_all(dataset_line(rec).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    session_id: u64,
    context: Vec<f64>,
    item_id: u64,
    rank: u32,
    viewed: u8,
    clicked: u8,
}

pub fn read_dataset_jsonl(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        records.push(ImpressionRecord {
            session_id: raw.session_id,
            context: ContextVector::new(raw.context)?,
            item_id: raw.item_id,
            rank: raw.rank,
            viewed: raw.viewed != 0,
            clicked: raw.clicked != 0,
        });
    }
    Ok(records)
}

fn f64_value(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

/// Ground-truth sidecar: the generating parameters and a config echo.
pub fn sidecar_value(config: &SimConfig) -> Value {
    serde_json::json!({
        "true_theta": config.true_theta.iter().map(|t| f64_value(*t)).collect::<Vec<_>>(),
        "link": "softplus",
        "config": {
            "n_sessions": config.n_sessions,
            "list_length": config.list_length,
            "n_items": config.n_items,
            "true_theta": config.true_theta.iter().map(|t| f64_value(*t)).collect::<Vec<_>>(),
            "quality_seed": config.quality_seed,
            "intervention": config.intervention.name(),
            "seed": config.seed,
        },
    })
}

pub fn write_sidecar(path: &Path, config: &SimConfig) -> Result<()> {
    write_json_file(path, &sidecar_value(config))
}

#[derive(Deserialize)]
struct RawSidecarConfig {
    n_sessions: u64,
    list_length: u32,
    n_items: u64,
    true_theta: Vec<f64>,
    quality_seed: u64,
    intervention: String,
    seed: u64,
}

#[derive(Deserialize)]
struct RawSidecar {
    config: RawSidecarConfig,
}

pub fn read_sidecar(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path)?;
    let raw: RawSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(SimConfig {
        n_sessions: raw.config.n_sessions,
        list_length: raw.config.list_length,
        n_items: raw.config.n_items,
        true_theta: raw.config.true_theta,
        quality_seed: raw.config.quality_seed,
        intervention: Intervention::parse(&raw.config.intervention)?,
        seed: raw.config.seed,
    })
}

/// Model document: {family, params, link, max_rank?, table?}.
pub fn model_to_json_value(model: &PositionBiasModel) -> Value {
    let theta_value =
        |theta: &[f64]| -> Value { Value::Array(theta.iter().map(|t| f64_value(*t)).collect()) };
    let link = model
        .link_kind()
        .map(|k| Value::String(k.name().into()))
        .unwrap_or(Value::Null);
    let params = match model {
        PositionBiasModel::Dcg | PositionBiasModel::Empirical { .. } => serde_json::json!({}),
        PositionBiasModel::Log { alpha } => serde_json::json!({ "alpha": f64_value(*alpha) }),
        PositionBiasModel::Exp { gamma } => serde_json::json!({ "gamma": f64_value(*gamma) }),
        PositionBiasModel::Prob { rho } => serde_json::json!({ "rho": f64_value(*rho) }),
        PositionBiasModel::ContextualLog { theta }
        | PositionBiasModel::ContextualExp { theta }
        | PositionBiasModel::ContextualProb { theta } => {
            serde_json::json!({ "theta": theta_value(theta) })
        }
    };
    let mut doc = serde_json::json!({
        "family": model.family_name(),
        "params": params,
        "link": link,
    });
    if let PositionBiasModel::Empirical { table } = model {
        let obj = doc.as_object_mut().expect("document is an object");
        obj.insert("max_rank".into(), Value::from(table.len() as u64));
        obj.insert(
            "table".into(),
            Value::Array(table.iter().map(|p| f64_value(*p)).collect()),
        );
    }
    doc
}

pub fn write_model_json(path: &Path, model: &PositionBiasModel) -> Result<()> {
    write_json_file(path, &model_to_json_value(model))
}

#[derive(Deserialize)]
struct RawModel {
    family: String,
    #[serde(default)]
    params: serde_json::Map<String, Value>,
    #[serde(default)]
    link: Option<String>,
    #[serde(default)]
    table: Option<Vec<f64>>,
}

pub fn read_model_json(path: &Path) -> Result<PositionBiasModel> {
    let text = fs::read_to_string(path)?;
    model_from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn model_from_json(text: &str) -> Result<PositionBiasModel> {
    let raw: RawModel = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let scalar = |name: &str| -> Result<f64> {
        raw.params
            .get(name)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Parse(format!("missing numeric param {name:?}")))
    };
    let theta = || -> Result<Vec<f64>> {
        raw.params
            .get("theta")
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .map(|v| {
                        v.as_f64()
                            .ok_or_else(|| Error::Parse("non-numeric theta entry".into()))
                    })
                    .collect()
            })
            .ok_or_else(|| Error::Parse("missing array param \"theta\"".into()))?
    };
    if let Some(link) = &raw.link {
        LinkKind::parse(link)?;
    }
    match raw.family.as_str() {
        "dcg" => Ok(PositionBiasModel::Dcg),
        "log" => PositionBiasModel::log(scalar("alpha")?),
        "exp" => PositionBiasModel::exp(scalar("gamma")?),
        "prob" => PositionBiasModel::prob(scalar("rho")?),
        "empirical" => {
            let table = raw
                .table
                .ok_or_else(|| Error::Parse("empirical model needs a table".into()))?;
            if table.is_empty() {
                return Err(Error::Parse("empirical table must be non-empty".into()));
            }
            Ok(PositionBiasModel::Empirical { table })
        }
        "contextual-log" => Ok(PositionBiasModel::ContextualLog { theta: theta()? }),
        "contextual-exp" => Ok(PositionBiasModel::ContextualExp { theta: theta()? }),
        "contextual-prob" => Ok(PositionBiasModel::ContextualProb { theta: theta()? }),
        other => Err(Error::Parse(format!("unknown model family {other:?}"))),
    }
}
