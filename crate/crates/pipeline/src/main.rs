use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moundline::catalog::CurationParams;
use moundline::evals::{render_table_csv, render_table_text, ConfusionCounts, TableRow};
use moundline::model::{LossKind, SegmenterSpec};
use moundline::mosaic::{write_heatmap, Ramp, RegionSweep, Weighting};
use moundline::formats::write_prob_raster;
use moundline::postproc::CandidateParams;
use moundline::synth::SceneSpec;
use moundline::tiles::ImageryManifest;
use moundline_pipeline::config::{SplitParams, TileParams};
use moundline_pipeline::error::{PipelineError, Result};
use moundline_pipeline::stages;
use moundline_pipeline::store::{read_gt, RunStore, DATA_DIR_ENV};
use moundline_pipeline::RunConfig;
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(name = "moundline", version, about = "Site detection pipeline and review service")]
struct Cli {
    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    /// Root of the run store.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "moundline-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate seeded synthetic scenes with ground truth.
    Synth {
        #[arg(long, default_value_t = 120)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene template (JSON); defaults apply otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Filter a site catalog and report per-reason counts.
    Curate {
        #[arg(long)]
        sites: PathBuf,
        #[arg(long)]
        negatives: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        top_k: usize,
        #[arg(long, default_value_t = 1000.0)]
        min_area: f64,
        #[arg(long, default_value_t = 1000.0)]
        window_side: f64,
        /// Expected total image count, compared against the computed one.
        #[arg(long)]
        reference_total: Option<usize>,
        #[arg(long, default_value = "curated")]
        out: PathBuf,
    },
    /// Cut image/mask tiles around curated sites and negative regions.
    Tile {
        #[arg(long)]
        imagery: PathBuf,
        /// Curated sites (kept.geojson).
        #[arg(long)]
        sites: PathBuf,
        #[arg(long)]
        negatives: Option<PathBuf>,
        #[arg(long, default_value_t = 1000.0)]
        window_m: f64,
        #[arg(long, default_value_t = 1.024)]
        ppm: f64,
        #[arg(long)]
        no_downscale: bool,
        /// strict or zero_pad.
        #[arg(long, default_value = "strict")]
        pad: String,
        #[arg(long, default_value_t = 0.1)]
        test_frac: f64,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tiles")]
        out: PathBuf,
    },
    /// Train the baseline segmenter on a tile directory.
    Train {
        #[arg(long)]
        tiles: PathBuf,
        /// Segmenter spec (JSON); flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// focal or dice.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Write probability rasters for tiles or manifest images.
    Predict {
        /// Baseline checkpoint, or a directory of external rasters.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tiles: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "preds")]
        out: PathBuf,
    },
    /// Turn probability rasters into candidate polygons.
    Vectorize {
        #[arg(long)]
        preds: PathBuf,
        #[command(flatten)]
        post: PostArgs,
        #[arg(long, default_value = "candidates.geojson")]
        out: PathBuf,
    },
    /// Confusion metrics from counts, or detection scoring of predictions.
    Evaluate {
        /// TP,TN,FP,FN.
        #[arg(long, conflicts_with_all = ["preds", "gt"])]
        counts: Option<String>,
        /// JSON-lines adjustment ledger applied to `--counts`.
        #[arg(long, requires = "counts")]
        ledger: Option<PathBuf>,
        #[arg(long, requires = "gt")]
        preds: Option<PathBuf>,
        /// Ground truth with `id` and `image_id` properties.
        #[arg(long, requires = "preds")]
        gt: Option<PathBuf>,
        #[command(flatten)]
        post: PostArgs,
        #[arg(long, default_value_t = 0.0)]
        min_intersection: f64,
        /// text, csv or json.
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a region, stitch predictions and render a heatmap.
    Mosaic {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// min_x,min_y,max_x,max_y in meters.
        #[arg(long)]
        extent: String,
        #[arg(long, default_value_t = 512)]
        tile: usize,
        #[arg(long, default_value_t = 256)]
        stride: usize,
        #[arg(long, default_value_t = 1.0)]
        ppm: f64,
        /// heat or gray.
        #[arg(long, default_value = "heat")]
        ramp: String,
        /// uniform or cosine.
        #[arg(long, default_value = "uniform")]
        weighting: String,
        #[arg(long, default_value = "heatmap.png")]
        out: PathBuf,
        /// Also write the stitched probabilities to `<raster>.f32`.
        #[arg(long)]
        raster: Option<PathBuf>,
    },
    /// Execute a full run from a config file into the run store.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the review API over the run store.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Args)]
struct PostArgs {
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    min_area: f64,
}

impl PostArgs {
    fn params(&self) -> CandidateParams {
        CandidateParams {
            sigma: self.sigma,
            threshold: self.threshold,
            min_area_m2: self.min_area,
            ..Default::default()
        }
    }
}

fn parse_enum<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_owned()))
        .map_err(|_| PipelineError::Config(format!("unknown --{flag} value {value:?}")))
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn parse_numbers<T: std::str::FromStr>(flag: &str, s: &str, n: usize) -> Result<Vec<T>> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| PipelineError::Config(format!("--{flag} expects {n} comma-separated numbers")))?;
    if parts.len() != n {
        return Err(PipelineError::Config(format!("--{flag} expects {n} comma-separated numbers")));
    }
    Ok(parts)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| PipelineError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Missing input files are a usage error, not a runtime failure.
fn require<'a>(paths: impl IntoIterator<Item = Option<&'a Path>>) -> Result<()> {
    for p in paths.into_iter().flatten() {
        if !p.exists() {
            return Err(PipelineError::MissingInput(p.to_path_buf()));
        }
    }
    Ok(())
}

fn check_inputs(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth { template, .. } => require([template.as_deref()]),
        Command::Curate { sites, negatives, .. } => require([Some(sites.as_path()), negatives.as_deref()]),
        Command::Tile { imagery, sites, negatives, .. } => {
            require([Some(imagery.as_path()), Some(sites.as_path()), negatives.as_deref()])
        }
        Command::Train { tiles, spec, .. } => require([Some(tiles.as_path()), spec.as_deref()]),
        Command::Predict { model, tiles, manifest, .. } => {
            require([Some(model.as_path()), tiles.as_deref(), manifest.as_deref()])
        }
        Command::Vectorize { preds, .. } => require([Some(preds.as_path())]),
        Command::Evaluate { ledger, preds, gt, .. } => require([ledger.as_deref(), preds.as_deref(), gt.as_deref()]),
        Command::Mosaic { manifest, model, .. } => require([Some(manifest.as_path()), Some(model.as_path())]),
        Command::Run { config } => require([Some(config.as_path())]),
        Command::Serve { .. } => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    check_inputs(&cli.command)?;
    match cli.command {
        Command::Synth { scenes, seed, template, out } => {
            let template: SceneSpec = match template {
                Some(p) => read_config(&p)?,
                None => SceneSpec::default(),
            };
            let ids = stages::synth_to_dir(&out, scenes, seed, &template)?;
            println!("wrote {} scenes to {}", ids.len(), out.display());
        }
        Command::Curate { sites, negatives, top_k, min_area, window_side, reference_total, out } => {
            let params = CurationParams { top_k, min_area_m2: min_area, window_side_m: window_side };
            let r = stages::curate_to_dir(&sites, negatives.as_deref(), &params, reference_total, &out)?;
            println!(
                "kept {} of {} sites, {} negatives, {} images",
                r.kept.len(),
                r.input_sites,
                r.negatives,
                r.total_images
            );
            if let Some(d) = &r.discrepancy {
                println!("warning: total images {} differs from reference {} by {}", d.computed, d.expected, d.difference);
            }
        }
        Command::Tile {
            imagery,
            sites,
            negatives,
            window_m,
            ppm,
            no_downscale,
            pad,
            test_frac,
            val_frac,
            seed,
            out,
        } => {
            let params = TileParams { window_m, ppm, downscale: !no_downscale, pad: parse_enum("pad", &pad)? };
            let split = SplitParams { test_frac, val_frac_of_train: val_frac };
            let n = stages::tile_to_dir(&imagery, &sites, negatives.as_deref(), &params, &split, seed, &out)?;
            println!("wrote {n} tiles to {}", out.display());
        }
        Command::Train { tiles, spec, epochs, learning_rate, loss, seed, out } => {
            let mut spec: SegmenterSpec = match spec {
                Some(p) => read_config(&p)?,
                None => SegmenterSpec::default(),
            };
            if let Some(e) = epochs {
                spec.epochs = e;
            }
            if let Some(lr) = learning_rate {
                spec.learning_rate = lr;
            }
            if let Some(l) = loss {
                spec.loss = parse_enum::<LossKind>("loss", &l)?;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let model = stages::train_from_dir(&tiles, &spec, &out)?;
            if let Some(last) = model.history.train.last() {
                println!("trained {} epochs, final loss {last:.6}", model.history.train.len());
            }
        }
        Command::Predict { model, tiles, manifest, out } => {
            let seg = stages::load_segmenter(&model)?;
            let images = stages::load_images(tiles.as_deref(), manifest.as_deref())?;
            let n = stages::predict_to_dir(seg.as_ref(), &images, &out)?;
            println!("wrote {n} probability rasters to {}", out.display());
        }
        Command::Vectorize { preds, post, out } => {
            let n = stages::vectorize_to_file(&preds, &post.params(), &out)?;
            println!("wrote {n} candidates to {}", out.display());
        }
        Command::Evaluate { counts, ledger, preds, gt, post, min_intersection, format, out } => {
            let format = format.as_str();
            if !matches!(format, "text" | "csv" | "json") {
                return Err(PipelineError::Config(format!("unknown --format {format:?}")));
            }
            match (counts, preds, gt) {
                (Some(c), None, None) => {
                    let v = parse_numbers::<u64>("counts", &c, 4)?;
                    let counts = ConfusionCounts::new(v[0], v[1], v[2], v[3]);
                    let ledger = match &ledger {
                        Some(p) => stages::read_ledger(p)?,
                        None => Vec::new(),
                    };
                    let (auto, adjusted) = stages::evaluate_counts(counts, &ledger)?;
                    let mut rows = vec![TableRow { model: "counts".into(), evaluation: "automatic".into(), counts: auto }];
                    if !ledger.is_empty() {
                        rows.push(TableRow { model: "counts".into(), evaluation: "adjusted".into(), counts: adjusted });
                    }
                    let text = match format {
                        "csv" => render_table_csv(&rows),
                        "json" => {
                            let docs: Vec<_> = rows
                                .iter()
                                .map(|r| {
                                    serde_json::json!({
                                        "evaluation": r.evaluation,
                                        "counts": r.counts,
                                        "metrics": moundline::evals::metrics(&r.counts),
                                    })
                                })
                                .collect();
                            let mut s = serde_json::to_string_pretty(&serde_json::json!({"v": 1, "rows": docs, "ledger": ledger}))
                                .expect("serializable");
                            s.push('\n');
                            s
                        }
                        _ => render_table_text(&rows),
                    };
                    emit(out.as_deref(), &text)?;
                }
                (None, Some(preds), Some(gt)) => {
                    let per_image = stages::candidates_for_dir(&preds, &post.params())?;
                    let gt = stages::gt_for_preds(&preds, &read_gt(&gt)?)?;
                    let report = stages::detection_report("cli", &per_image, &gt, post.threshold, min_intersection);
                    let text = match format {
                        "json" => {
                            let mut s = serde_json::to_string_pretty(&report).expect("serializable");
                            s.push('\n');
                            s
                        }
                        "csv" => render_table_csv(&[TableRow {
                            model: "detection".into(),
                            evaluation: "automatic".into(),
                            counts: report.counts,
                        }]),
                        _ => render_table_text(&[TableRow {
                            model: "detection".into(),
                            evaluation: "automatic".into(),
                            counts: report.counts,
                        }]),
                    };
                    emit(out.as_deref(), &text)?;
                }
                _ => return Err(PipelineError::Config("give --counts, or --preds with --gt".into())),
            }
        }
        Command::Mosaic { manifest, model, extent, tile, stride, ppm, ramp, weighting, out, raster } => {
            let e = parse_numbers::<f64>("extent", &extent, 4)?;
            let ramp: Ramp = parse_enum("ramp", &ramp)?;
            let weighting: Weighting = parse_enum("weighting", &weighting)?;
            let sweep = RegionSweep { extent: (e[0], e[1], e[2], e[3]), tile_side: tile, stride, ppm };
            let manifest = ImageryManifest::load(&manifest)?;
            let seg = stages::load_segmenter(&model)?;
            let mosaic = stages::mosaic_region(&manifest, seg.as_ref(), &sweep, weighting)?;
            write_heatmap(&out, &mosaic, ramp)?;
            if let Some(r) = raster {
                write_prob_raster(&r, &mosaic)?;
            }
            println!("wrote {}x{} mosaic to {}", mosaic.width(), mosaic.height(), out.display());
        }
        Command::Run { config } => {
            let config = RunConfig::load(&config)?;
            let store = RunStore::new(&cli.data_dir);
            let record = stages::execute_run(&store, &config)?;
            let paths = store.paths(&record.id)?;
            let report: moundline_pipeline::store::DetectionReport = read_config(&paths.report())?;
            print!(
                "{}",
                render_table_text(&[TableRow { model: record.id.clone(), evaluation: "automatic".into(), counts: report.counts }])
            );
            println!("run written to {}", paths.dir.display());
        }
        Command::Serve { host, port } => {
            let addr: std::net::SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| PipelineError::Config(format!("bad address {host}:{port}: {e}")))?;
            let store = RunStore::new(&cli.data_dir);
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::io("tokio runtime", e))?;
            eprintln!("serving {} on http://{addr}", store.root().display());
            rt.block_on(moundline_pipeline::server::serve(store, addr))
                .map_err(|e| PipelineError::io(addr.to_string(), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json_errors = cli.json_errors;
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json_errors {
                eprintln!("{}", serde_json::to_string(&e.report()).expect("serializable"));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
