//! Playground bindings. The plain functions do the work and are what the
//! native tests call; the `js_*` exports wrap them for the page.

use ctxrouter::cdg;
use ctxrouter::context::{Kind, Selector};
use ctxrouter::flow::{parse_pipeline, qcx};
use ctxrouter::policy::AclTable;
use ctxrouter::record::{parse_lines, to_lines, Record, Value};
use wasm_bindgen::prelude::*;

/// Output of one pipeline run, as record-lines.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    output: String,
    rejects: String,
    logged: String,
}

#[wasm_bindgen]
impl Run {
    #[wasm_bindgen(getter)]
    pub fn output(&self) -> String {
        self.output.clone()
    }

    /// Rejected records with `_reason` and `_stage` fields added.
    #[wasm_bindgen(getter)]
    pub fn rejects(&self) -> String {
        self.rejects.clone()
    }

    /// Records copied out by `log(label)` stages, with `_log` added.
    #[wasm_bindgen(getter)]
    pub fn logged(&self) -> String {
        self.logged.clone()
    }
}

pub fn run_pipeline(records: &str, pipeline: &str) -> Result<Run, String> {
    let input = parse_lines(records).map_err(|e| format!("records: {e}"))?;
    let p = parse_pipeline(pipeline).map_err(|e| format!("pipeline: {e}"))?;
    let out = p.eval(input);
    let rejects: Vec<Record> = out
        .report
        .rejects
        .into_iter()
        .map(|r| {
            let mut rec = r.record;
            rec.set("_reason", Value::str(r.reason));
            rec.set("_stage", Value::Int(r.stage as i64));
            rec
        })
        .collect();
    let logged: Vec<Record> = out
        .report
        .logged
        .into_iter()
        .map(|(label, mut rec)| {
            rec.set("_log", Value::str(label));
            rec
        })
        .collect();
    Ok(Run {
        output: to_lines(&out.records),
        rejects: to_lines(&rejects),
        logged: to_lines(&logged),
    })
}

/// `targets` is whitespace separated.
pub fn query_complexity(targets: &str, pipeline: &str) -> Result<usize, String> {
    let targets: Vec<&str> = targets.split_whitespace().collect();
    if targets.is_empty() {
        return Err("at least one target".into());
    }
    let p = parse_pipeline(pipeline).map_err(|e| format!("pipeline: {e}"))?;
    Ok(qcx(&targets, &p))
}

/// Takes either a bare `role: [patterns]` mapping or one under `acl:`.
fn acl(text: &str) -> Result<AclTable, String> {
    match AclTable::from_yaml(text) {
        Ok(t) => Ok(t),
        Err(e) => match text.trim_start().strip_prefix("acl:") {
            Some(rest) => AclTable::from_yaml(rest).map_err(|e| e.to_string()),
            None => Err(e.to_string()),
        },
    }
}

/// Whether `role` may read `target` (`name@egress`) under the ACL.
pub fn check_access(acl_yaml: &str, role: &str, target: &str) -> Result<bool, String> {
    let table = acl(acl_yaml)?;
    let (name, egress) = target
        .trim()
        .rsplit_once('@')
        .ok_or_else(|| format!("expected name@egress, got {target:?}"))?;
    Ok(table.check_target(role.trim(), name, egress))
}

/// Whether a sourcing selector (`any`, `group/version/name` with `*`
/// components) matches a context kind.
pub fn match_kind(selector: &str, kind: &str) -> Result<bool, String> {
    let sel: Selector = selector.trim().parse().map_err(|e| format!("selector: {e}"))?;
    let kind: Kind = kind.trim().parse().map_err(|e| format!("kind: {e}"))?;
    Ok(cdg::match_kind(&sel, &kind))
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runPipeline)]
pub fn js_run_pipeline(records: &str, pipeline: &str) -> Result<Run, JsError> {
    js(run_pipeline(records, pipeline))
}

#[wasm_bindgen(js_name = qcx)]
pub fn js_qcx(targets: &str, pipeline: &str) -> Result<usize, JsError> {
    js(query_complexity(targets, pipeline))
}

#[wasm_bindgen(js_name = checkAccess)]
pub fn js_check_access(acl_yaml: &str, role: &str, target: &str) -> Result<bool, JsError> {
    js(check_access(acl_yaml, role, target))
}

#[wasm_bindgen(js_name = matchKind)]
pub fn js_match_kind(selector: &str, kind: &str) -> Result<bool, JsError> {
    js(match_kind(selector, kind))
}
