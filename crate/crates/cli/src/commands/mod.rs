pub mod eval;
pub mod gen_tasks;
pub mod gradcheck;
pub mod metrics;
pub mod search;
pub mod train;

use serde::Serialize;
use std::path::Path;

/// Every JSON artifact embeds the command, resolved parameters, and the code
/// version for provenance.
#[derive(Serialize)]
pub struct Artifact<P: Serialize, T: Serialize> {
    pub command: &'static str,
    pub code_version: String,
    pub run_config: P,
    #[serde(flatten)]
    pub payload: T,
}

pub fn write_artifact<P: Serialize, T: Serialize>(
    path: &Path,
    command: &'static str,
    run_config: P,
    payload: T,
) -> anyhow::Result<()> {
    let artifact = Artifact {
        command,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        run_config,
        payload,
    };
    let mut body = serde_json::to_vec_pretty(&artifact)?;
    body.push(b'\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, body)?;
    Ok(())
}
