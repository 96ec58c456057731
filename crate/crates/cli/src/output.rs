use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

/// Environment variable naming the root for default output directories.
pub const OUT_ROOT_VAR: &str = "STMARL_OUT";

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (default: `$STMARL_OUT/<command>-…`, with `runs` as the root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

/// `explicit`, or `default_name` under the output root.
pub fn resolve(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(default_name)
    })
}

/// A hidden sibling directory that becomes the output directory only on
/// [`Staged::commit`]. Dropping it uncommitted removes everything written.
pub struct Staged {
    target: PathBuf,
    tmp: Option<PathBuf>,
}

impl Staged {
    pub fn new(target: &Path, force: bool) -> Result<Self> {
        if target.exists() && !force {
            bail!("output directory {} already exists (pass --force to replace it)", target.display());
        }
        let name = target
            .file_name()
            .with_context(|| format!("output path {} has no directory name", target.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self { target: target.to_path_buf(), tmp: Some(tmp) })
    }

    pub fn path(&self) -> &Path {
        self.tmp.as_deref().expect("staging directory present until commit")
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        let tmp = self.tmp.take().expect("staging directory present until commit");
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target)
                .with_context(|| format!("removing previous {}", self.target.display()))?;
        }
        std::fs::rename(&tmp, &self.target).with_context(|| format!("moving outputs to {}", self.target.display()))?;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if let Some(tmp) = self.tmp.take() {
            let _ = std::fs::remove_dir_all(tmp);
        }
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
