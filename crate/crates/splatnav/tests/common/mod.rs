//! Shared fixtures: a small world, a running service and a validator for
//! the subset of draft-07 the protocol schema uses.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use serde_json::Value;
use splatnav::server::Service;
use splatnav_core::env::{EnvConfig, EnvWorld};
use splatnav_core::relight::EnvLight;
use splatnav_core::scene::{gen_forest, ForestParams};

pub fn schema() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/protocol.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn small_world(trees: usize) -> (Arc<EnvWorld>, EnvConfig) {
    let mut config = EnvConfig::default();
    config.sampling.min_distance = 12.0;
    let scene = gen_forest(3, &ForestParams::square(30.0, trees)).unwrap();
    let world = EnvWorld::new(scene, None, EnvLight::default_sky(2), &config).unwrap();
    (Arc::new(world), config)
}

pub fn spawn_service(trees: usize) -> SocketAddr {
    let (world, config) = small_world(trees);
    Service::new(world, config).unwrap().spawn("127.0.0.1:0").unwrap().0
}

/// Validates `v` against `#/definitions/<def>` and returns every violation.
pub fn violations(schema: &Value, def: &str, v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    check(schema, &schema["definitions"][def], v, def, &mut out);
    out
}

pub fn assert_valid(schema: &Value, def: &str, v: &Value) {
    let errs = violations(schema, def, v);
    assert!(errs.is_empty(), "{def} violations: {errs:#?}\nin {v}");
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64() || v.as_f64().is_some_and(|x| x.fract() == 0.0),
        other => panic!("schema uses unsupported type {other}"),
    }
}

fn check(root: &Value, s: &Value, v: &Value, at: &str, out: &mut Vec<String>) {
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/definitions/").expect("local refs only");
        check(root, &root["definitions"][name], v, at, out);
        return;
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            out.push(format!("{at}: expected type {t}, got {v}"));
            return;
        }
    }
    if let Some(c) = s.get("const") {
        if c != v {
            out.push(format!("{at}: expected {c}, got {v}"));
        }
    }
    if let Some(Value::Array(opts)) = s.get("enum") {
        if !opts.contains(v) {
            out.push(format!("{at}: {v} not in {opts:?}"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            out.push(format!("{at}: {x} < minimum {min}"));
        }
    }
    if let (Some(max), Some(x)) = (s.get("maximum").and_then(Value::as_f64), v.as_f64()) {
        if x > max {
            out.push(format!("{at}: {x} > maximum {max}"));
        }
    }
    if let Some(obj) = v.as_object() {
        if let Some(Value::Array(req)) = s.get("required") {
            for k in req {
                let k = k.as_str().unwrap();
                if !obj.contains_key(k) {
                    out.push(format!("{at}: missing {k}"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(ps) => check(root, ps, child, &format!("{at}.{k}"), out),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    out.push(format!("{at}: unexpected property {k}"))
                }
                None => {}
            }
        }
    }
    if let Some(arr) = v.as_array() {
        if let Some(n) = s.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < n {
                out.push(format!("{at}: {} items < {n}", arr.len()));
            }
        }
        if let Some(n) = s.get("maxItems").and_then(Value::as_u64) {
            if arr.len() as u64 > n {
                out.push(format!("{at}: {} items > {n}", arr.len()));
            }
        }
        if let Some(items) = s.get("items") {
            for (i, x) in arr.iter().enumerate() {
                check(root, items, x, &format!("{at}[{i}]"), out);
            }
        }
    }
    if let Some(Value::Array(branches)) = s.get("oneOf") {
        let passing = branches
            .iter()
            .filter(|b| {
                let mut sub = Vec::new();
                check(root, b, v, at, &mut sub);
                sub.is_empty()
            })
            .count();
        if passing != 1 {
            out.push(format!("{at}: {passing} oneOf branches match"));
        }
    }
}
