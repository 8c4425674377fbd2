//! CSV and JSON emission. Reals carry 6 significant digits; output is
//! locale-independent and byte-stable for identical input.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::episodic::{AblationCell, CellStatus, EvalReport};
use crate::error::{Error, Result};
use crate::store::ItemKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

/// Formats `x` with 6 significant digits, like C's `%.6g`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// A real rounded to 6 significant digits as a JSON number.
fn real(x: f64) -> Value {
    match sig6(x).parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
        Some(n) => Value::Number(n),
        None => Value::Null,
    }
}

/// Something that can be written as a report.
pub trait Report {
    fn to_csv(&self) -> String;
    fn to_json(&self) -> Value;

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).expect("json");
                s.push('\n');
                s
            }
        }
    }
}

pub fn emit_report<R: Report + ?Sized>(report: &R, path: impl AsRef<Path>, format: Format) -> Result<()> {
    fs::write(path, report.render(format))?;
    Ok(())
}

impl Report for EvalReport {
    fn to_csv(&self) -> String {
        let mut s = String::from("episode,accuracy\n");
        for (i, a) in self.per_episode_accuracy.iter().enumerate() {
            let _ = writeln!(s, "{i},{}", sig6(*a));
        }
        let _ = writeln!(s, "mean,{}", sig6(self.mean));
        let _ = writeln!(s, "std,{}", sig6(self.std));
        s
    }

    fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("episodes".into(), json!(self.per_episode_accuracy.len()));
        m.insert(
            "per_episode_accuracy".into(),
            Value::Array(self.per_episode_accuracy.iter().map(|&a| real(a)).collect()),
        );
        m.insert("mean".into(), real(self.mean));
        m.insert("std".into(), real(self.std));
        m.insert("confusion".into(), json!(self.confusion));
        Value::Object(m)
    }
}

/// A k sweep: one summary row per shot count.
pub struct SweepReport<'a>(pub &'a [(usize, EvalReport)]);

impl Report for SweepReport<'_> {
    fn to_csv(&self) -> String {
        let mut s = String::from("shots,episodes,mean,std,diagonal_fraction\n");
        for (k, r) in self.0 {
            let _ = writeln!(
                s,
                "{k},{},{},{},{}",
                r.per_episode_accuracy.len(),
                sig6(r.mean),
                sig6(r.std),
                sig6(r.diagonal_fraction())
            );
        }
        s
    }

    fn to_json(&self) -> Value {
        let rows = Value::Array(
            self.0
                .iter()
                .map(|(k, r)| {
                    let mut m = Map::new();
                    m.insert("shots".into(), json!(k));
                    m.insert("diagonal_fraction".into(), real(r.diagonal_fraction()));
                    m.insert("report".into(), r.to_json());
                    Value::Object(m)
                })
                .collect(),
        );
        json!({ "sweep": rows })
    }
}

fn status_str(s: CellStatus) -> &'static str {
    match s {
        CellStatus::Ok => "ok",
        CellStatus::Incompatible => "incompatible",
    }
}

fn opt_sig6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

impl Report for [AblationCell] {
    fn to_csv(&self) -> String {
        let mut s = String::from("backbones,reshape,mlp,status,accuracy_mean,accuracy_std\n");
        for c in self {
            let mlp: Vec<String> = c.mlp_structure.iter().map(|h| h.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&c.backbone_subset.join("+")),
                c.reshape_side,
                mlp.join("-"),
                status_str(c.status),
                opt_sig6(c.accuracy_mean),
                opt_sig6(c.accuracy_std)
            );
        }
        s
    }

    fn to_json(&self) -> Value {
        let rows = Value::Array(
            self.iter()
                .map(|c| {
                    let mut m = Map::new();
                    m.insert("backbones".into(), json!(c.backbone_subset));
                    m.insert("reshape".into(), json!(c.reshape_side));
                    m.insert("mlp".into(), json!(c.mlp_structure));
                    m.insert("status".into(), json!(status_str(c.status)));
                    m.insert("accuracy_mean".into(), c.accuracy_mean.map_or(Value::Null, real));
                    m.insert("accuracy_std".into(), c.accuracy_std.map_or(Value::Null, real));
                    Value::Object(m)
                })
                .collect(),
        );
        json!({ "cells": rows })
    }
}

/// One t-SNE output point with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub class_name: String,
    pub key: ItemKey,
}

impl Report for [EmbeddingPoint] {
    fn to_csv(&self) -> String {
        let mut s = String::from("x,y,label,class_name,image_id\n");
        for p in self {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                sig6(p.x),
                sig6(p.y),
                p.label,
                csv_field(&p.class_name),
                p.key.image_id
            );
        }
        s
    }

    fn to_json(&self) -> Value {
        let rows = Value::Array(
            self.iter()
                .map(|p| {
                    let mut m = Map::new();
                    m.insert("x".into(), real(p.x));
                    m.insert("y".into(), real(p.y));
                    m.insert("label".into(), json!(p.label));
                    m.insert("class_name".into(), json!(p.class_name));
                    m.insert("class_index".into(), json!(p.key.class_index));
                    m.insert("image_id".into(), json!(p.key.image_id));
                    Value::Object(m)
                })
                .collect(),
        );
        json!({ "points": rows })
    }
}

/// Quotes a CSV field when it contains a separator, quote or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.2), "0.2");
        assert_eq!(sig6(2.0 / 3.0), "0.666667");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0000123456789), "1.23457e-5");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(-1.609437912), "-1.60944");
        assert_eq!(sig6(9.9999996), "10");
    }

    #[test]
    fn eval_report_csv() {
        let r = EvalReport {
            per_episode_accuracy: vec![1.0, 0.8],
            mean: 0.9,
            std: 0.1,
            confusion: vec![vec![2, 0], vec![1, 1]],
        };
        assert_eq!(r.to_csv(), "episode,accuracy\n0,1\n1,0.8\nmean,0.9\nstd,0.1\n");
        let json = r.render(Format::Json);
        assert_eq!(r.render(Format::Json), json);
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["mean"], json!(0.9));
        assert_eq!(v["per_episode_accuracy"], json!([1.0, 0.8]));
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn ablation_rows() {
        let cells: Vec<AblationCell> = (0..7)
            .map(|i| AblationCell {
                backbone_subset: vec![format!("b{i}"), "x".into()],
                reshape_side: 4,
                mlp_structure: vec![512, 256, 32],
                accuracy_mean: (i % 2 == 0).then_some(0.5),
                accuracy_std: (i % 2 == 0).then_some(0.0),
                status: if i % 2 == 0 { CellStatus::Ok } else { CellStatus::Incompatible },
            })
            .collect();
        let csv = cells.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert_eq!(csv.lines().nth(1).unwrap(), "b0+x,4,512-256-32,ok,0.5,0");
        assert_eq!(csv.lines().nth(2).unwrap(), "b1+x,4,512-256-32,incompatible,,");
    }

    #[test]
    fn embedding_csv_quotes_names() {
        let pts = [EmbeddingPoint {
            x: 1.5,
            y: -2.0,
            label: 3,
            class_name: "missing, bolts".into(),
            key: ItemKey { class_index: 4, image_id: 17 },
        }];
        assert_eq!(pts.to_csv(), "x,y,label,class_name,image_id\n1.5,-2,3,\"missing, bolts\",17\n");
    }
}
