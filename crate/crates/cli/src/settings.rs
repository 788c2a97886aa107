//! Flag tables, clap construction and the defaults → config file → flags
//! merge. Every flag is also a config key (`--per-class` ↔ `per_class`), so a
//! run's `config.txt` echo can be fed back with `--config`.

use std::path::Path;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use vslr_core::config::KeyValues;

use crate::error::CliError;

/// One flag: config key, default (`None` = required or optional without a
/// default), help text, and whether it is required after the merge.
#[derive(Debug, Clone, Copy)]
pub struct Setting {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
    pub required: bool,
}

const fn opt(key: &'static str, default: &'static str, help: &'static str) -> Setting {
    Setting {
        key,
        default: Some(default),
        help,
        required: false,
    }
}

const fn req(key: &'static str, help: &'static str) -> Setting {
    Setting {
        key,
        default: None,
        help,
        required: true,
    }
}

const fn maybe(key: &'static str, help: &'static str) -> Setting {
    Setting {
        key,
        default: None,
        help,
        required: false,
    }
}

const COMMON: &[Setting] = &[
    opt("seed", "0", "Seed for every random stream of the run"),
    opt("precision", "32", "Scalar width in bits: 32 or 64"),
    opt("threads", "1", "Matmul worker threads (results do not depend on it)"),
];

const DATA: &[Setting] = &[
    req("manifest", "Dataset manifest (JSON)"),
    maybe("videos", "Directory of <video_id>.vsv files [default: videos/ beside the manifest]"),
];

const MODEL: &[Setting] = &[
    opt("dim", "32", "Model width"),
    opt("depth", "3", "Encoder blocks"),
    opt("heads", "4", "Attention heads"),
    opt("patch", "8", "Patch / cube side in pixels"),
    opt("frames", "8", "Frames per clip"),
    opt("crop", "32", "Square crop side in pixels"),
];

const VARIANT: Setting = opt("variant", "divided", "Encoder variant: divided or joint");

const PIPELINE: &[Setting] = &[
    opt("sampling", "consecutive", "Frame sampling: consecutive or even"),
    opt("resize_short", "34", "Short side is scaled up to at least this"),
    opt("resize_long", "40", "Long side is scaled down to at most this"),
];

const TRAIN: &[Setting] = &[
    opt("batch", "4", "Clips per step"),
    opt("epochs", "20", "Passes over the merged train split"),
    opt("lr", "0.001", "Adam learning rate"),
    opt("fine_tuned_layers", "all", "Top encoder blocks to train, or all"),
];

pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub groups: Vec<&'static [Setting]>,
    pub extra: Vec<Setting>,
}

impl Spec {
    pub fn settings(&self) -> Vec<Setting> {
        self.groups
            .iter()
            .flat_map(|g| g.iter().copied())
            .chain(self.extra.iter().copied())
            .chain(COMMON.iter().copied())
            .collect()
    }

    pub fn defaults(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for s in self.settings() {
            if let Some(d) = s.default {
                kv.set(s.key, d);
            }
        }
        kv
    }
}

pub fn specs() -> Vec<Spec> {
    vec![
        Spec {
            name: "gen-data",
            about: "Write a seeded synthetic dataset: manifest.json and videos/",
            groups: vec![],
            extra: vec![
                opt("classes", "4", "Number of classes"),
                opt("per_class", "6", "Videos per class (split 4:1:1)"),
                opt("frames", "8", "Frames per video"),
                opt("size", "32", "Frame side in pixels"),
                opt("crop", "32", "Crop the data is meant for; frames must be at least this large"),
            ],
        },
        Spec {
            name: "validate-manifest",
            about: "Check a manifest and, when videos are given, run every clip through preprocessing",
            groups: vec![],
            extra: vec![
                req("manifest", "Dataset manifest (JSON)"),
                maybe("videos", "Directory of <video_id>.vsv files; enables the preprocessing check"),
                opt("wlasl_bounds", "false", "Also enforce WLASL100 per-gloss and frame-count bounds"),
                opt("frames", "8", "Frames per clip for the preprocessing check"),
                opt("crop", "32", "Crop side for the preprocessing check"),
                PIPELINE[0],
                PIPELINE[1],
                PIPELINE[2],
            ],
        },
        Spec {
            name: "pretrain",
            about: "Masked-autoencoder pretraining of a joint encoder",
            groups: vec![DATA, MODEL],
            extra: vec![
                PIPELINE[1],
                PIPELINE[2],
                opt("sampling", "consecutive", "Frame sampling: consecutive or even"),
                opt("ratio", "0.75", "Fraction of spatial cells hidden per clip"),
                opt("decoder_depth", "2", "Decoder blocks"),
                opt("decoder_dim", "16", "Decoder width"),
                opt("steps", "200", "Optimizer steps"),
                opt("batch", "4", "Clips per step"),
                opt("lr", "0.001", "Adam learning rate"),
                opt("checkpoint_every", "0", "Extra checkpoint interval in steps (0 = final only)"),
                opt("flip", "false", "Horizontal-flip augmentation"),
            ],
        },
        Spec {
            name: "finetune",
            about: "Fine-tune a classifier on train+val, evaluating on test after every epoch",
            groups: vec![DATA, MODEL, PIPELINE, TRAIN],
            extra: vec![
                VARIANT,
                maybe("init_encoder", "Pretrained autoencoder checkpoint to initialize the encoder from"),
            ],
        },
        Spec {
            name: "evaluate",
            about: "Top-1/5/10 evaluation of a classifier checkpoint",
            groups: vec![DATA, MODEL, PIPELINE],
            extra: vec![
                VARIANT,
                req("checkpoint", "Classifier checkpoint"),
                opt("split", "test", "Split to evaluate: train, val or test"),
                opt("eval_batch", "8", "Clips per forward pass"),
                maybe("start_frame", "Pin the consecutive window's first frame"),
            ],
        },
        Spec {
            name: "ablate",
            about: "Fine-tune one fresh model per grid row and tabulate test top-1 as CSV",
            groups: vec![DATA, MODEL, PIPELINE, TRAIN],
            extra: vec![
                VARIANT,
                maybe(
                    "grid",
                    "Grid file, one row per line of key=value overrides [default: consecutive vs even]",
                ),
            ],
        },
        Spec {
            name: "attn-map",
            about: "Attention-rollout heatmaps of one video as per-frame PGM files",
            groups: vec![DATA, MODEL, PIPELINE],
            extra: vec![
                VARIANT,
                req("checkpoint", "Classifier checkpoint"),
                req("video", "Video id from the manifest"),
                maybe("start_frame", "Pin the consecutive window's first frame"),
            ],
        },
    ]
}

pub fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("vslr")
        .about("Video transformers for word-level sign language recognition")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in specs() {
        let mut sub = Command::new(spec.name).about(spec.about);
        sub = sub
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("key = value file; overrides defaults, overridden by flags"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .default_value("out")
                    .help("Output directory (created); receives config.txt"),
            );
        for s in spec.settings() {
            let mut arg = Arg::new(s.key)
                .long(flag(s.key))
                .value_name(s.key.to_uppercase())
                .action(ArgAction::Set)
                .help(s.help);
            if let Some(d) = s.default {
                arg = arg.default_value(d);
            }
            sub = sub.arg(arg);
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Every key any subcommand understands. Config files may carry keys of
/// other subcommands (an echo from `finetune` fed to `evaluate`); they are
/// ignored. Anything else is a typo and rejected.
fn known_keys() -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = specs().iter().flat_map(|s| s.settings()).map(|s| s.key).collect();
    keys.extend(["command", "out"]);
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: &'static str,
    pub out: String,
    pub kv: KeyValues,
}

impl Resolved {
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.try_get(key)?
            .ok_or_else(|| CliError::usage(format!("missing required flag --{}", flag(key))))
    }

    pub fn try_get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.kv.get(key).map_err(|e| CliError::config(e.to_string()))
    }

    /// The echo file: the command plus every resolved key.
    pub fn echo(&self) -> String {
        let mut kv = self.kv.clone();
        kv.set("command", self.command);
        kv.to_text()
    }
}

pub fn resolve(name: &str, m: &ArgMatches) -> Result<Resolved, CliError> {
    let spec = specs()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CliError::usage(format!("unknown subcommand {name}")))?;
    let mut kv = spec.defaults();
    let keys: Vec<&str> = spec.settings().iter().map(|s| s.key).collect();
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{path}: {e}")))?;
        let file = KeyValues::parse(&text).map_err(|e| CliError::config(format!("{path}: {e}")))?;
        file.only(&known_keys()).map_err(|e| CliError::config(format!("{path}: {e}")))?;
        if let Some(cmd) = file.entries.get("command") {
            if cmd != name {
                return Err(CliError::config(format!("{path} was written by `{cmd}`, not `{name}`")));
            }
        }
        let base = config_dir(path);
        for (k, v) in file.entries {
            if keys.contains(&k.as_str()) {
                let v = if is_path_key(&k) { rebase(&base, &v) } else { v };
                kv.set(&k, v);
            }
        }
    }
    for key in &keys {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            if let Some(v) = m.get_one::<String>(key) {
                kv.set(key, v);
            }
        }
    }
    for key in &keys {
        if is_path_key(key) {
            if let Some(v) = kv.entries.get_mut(*key) {
                if let Ok(abs) = std::fs::canonicalize(&*v) {
                    *v = abs.to_string_lossy().into_owned();
                }
            }
        }
    }
    for s in spec.settings() {
        if s.required && !kv.entries.contains_key(s.key) {
            return Err(CliError::usage(format!("missing required flag --{}", flag(s.key))));
        }
    }
    let out = m.get_one::<String>("out").cloned().unwrap_or_else(|| "out".into());
    Ok(Resolved {
        command: spec.name,
        out,
        kv,
    })
}

fn is_path_key(key: &str) -> bool {
    matches!(key, "manifest" | "videos" | "checkpoint" | "init_encoder" | "grid")
}

fn config_dir(path: &str) -> std::path::PathBuf {
    Path::new(path).parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Relative paths in a config file are relative to the file itself.
fn rebase(base: &Path, value: &str) -> String {
    let p = Path::new(value);
    if p.is_absolute() || base.as_os_str().is_empty() {
        value.to_string()
    } else {
        base.join(p).to_string_lossy().into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_have_unique_keys_and_valid_clap() {
        command().debug_assert();
        for spec in specs() {
            let mut keys: Vec<_> = spec.settings().iter().map(|s| s.key).collect();
            let n = keys.len();
            keys.sort_unstable();
            keys.dedup();
            assert_eq!(keys.len(), n, "{}", spec.name);
        }
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "classes = 5\nsize = 48\n").unwrap();
        let m = command()
            .try_get_matches_from(["vslr", "gen-data", "--config", cfg.to_str().unwrap(), "--size", "40"])
            .unwrap();
        let (name, sub) = m.subcommand().unwrap();
        let r = resolve(name, sub).unwrap();
        assert_eq!(r.get::<usize>("classes").unwrap(), 5);
        assert_eq!(r.get::<usize>("size").unwrap(), 40);
        assert_eq!(r.get::<usize>("per_class").unwrap(), 6);
    }

    #[test]
    fn config_paths_are_relative_to_the_file() {
        assert_eq!(rebase(Path::new("runs/a"), "m.json"), "runs/a/m.json");
        assert_eq!(rebase(Path::new("runs/a"), "/abs/m.json"), "/abs/m.json");
        assert_eq!(rebase(Path::new(""), "m.json"), "m.json");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "clases = 5\n").unwrap();
        let m = command()
            .try_get_matches_from(["vslr", "gen-data", "--config", cfg.to_str().unwrap()])
            .unwrap();
        let (name, sub) = m.subcommand().unwrap();
        assert!(resolve(name, sub).is_err());
    }
}
