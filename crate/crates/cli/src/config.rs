use serde_json::Value;

use mcl_core::train::RunConfig;
use mcl_core::validate::Validate;
use mcl_core::{MclError, Result};

use crate::{Cmd, Common};

/// Preset, then config file, then `--seed`/`--out`/`--set`; validated before
/// any work starts.
pub(crate) fn resolve(common: &Common, cmd: &Cmd) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(&common.preset)?;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| MclError::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| MclError::format(path, e.to_string()))?;
        let mut tree = serde_json::to_value(&cfg).expect("config serializes");
        merge(&mut tree, file);
        cfg = serde_json::from_value(tree).map_err(|e| MclError::format(path, e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    for s in &common.sets {
        cfg.set(s)?;
    }
    if let Some(out) = &common.out {
        match cmd {
            Cmd::GenData => cfg.data_dir = out.clone(),
            Cmd::PrecomputeMotion { .. } => cfg.cache_dir = Some(out.clone()),
            _ => cfg.output_dir = out.clone(),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_recursive() {
        let mut a = json!({"x": {"y": 1, "z": 2}, "w": [1, 2]});
        merge(&mut a, json!({"x": {"z": 5}, "w": [3], "n": null}));
        assert_eq!(a, json!({"x": {"y": 1, "z": 5}, "w": [3], "n": null}));
    }
}
