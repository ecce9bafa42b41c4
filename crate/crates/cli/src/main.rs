mod overlay;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use boundary_spot::data::dataset::ANNOTATIONS_FILE;
use boundary_spot::data::{
    gen_dataset, load_annotations, AnnotationRecord, Dataset, DatasetConfig, ProposalMode,
};
use boundary_spot::diagnostics::gradcheck_suite;
use boundary_spot::eval::{evaluate, load_spots, write_spots, ImageSpots, LexiconMode, DEFAULT_IOU};
use boundary_spot::geometry::Point2;
use boundary_spot::model::{load_checkpoint, save_checkpoint, train_loop, Spotter, SpotterConfig, TrainConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boundary-spot", version, about = "Boundary-point text spotting on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Maximum total baseline turn per word, degrees.
        #[arg(long, default_value_t = 60.0)]
        curvature: f64,
        /// Maximum absolute rotation, degrees.
        #[arg(long, default_value_t = 45.0)]
        rotation: f64,
        #[arg(long, default_value = "96x192", value_parser = parse_size)]
        image_size: (usize, usize),
    },
    /// Train the boundary regressor and recognizer.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = ProposalMode::Oriented)]
        proposals: ProposalMode,
        #[arg(long, default_value_t = 7)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Proposal jitter for boundary-regressor crops.
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
        #[arg(long, default_value_t = 64)]
        rec_channels: usize,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 256)]
        attention: usize,
        /// Dataset scored after every epoch; defaults to the training data.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Run the pipeline on oracle proposals of every image in a dataset.
    Spot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score spot records against a dataset.
    Eval {
        #[arg(long)]
        spots: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = LexiconMode::None)]
        mode: LexiconMode,
        #[arg(long, default_value_t = DEFAULT_IOU)]
        iou: f64,
        /// Report file; defaults to the spots path with a `.report.jsonl` suffix.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw spot records or annotations onto an image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        /// Spots file, or an annotations file.
        #[arg(long)]
        spots: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    let h = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_dataset(dir: &Path) -> Result<()> {
    ensure!(dir.is_dir(), "dataset directory {} does not exist", dir.display());
    ensure!(
        dir.join(ANNOTATIONS_FILE).is_file(),
        "{} has no {ANNOTATIONS_FILE}",
        dir.display()
    );
    Ok(())
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::GenData {
            out,
            count,
            seed,
            curvature,
            rotation,
            image_size: (height, width),
        } => {
            let cfg = DatasetConfig {
                count,
                height,
                width,
                max_curvature: curvature,
                max_rotation: rotation,
                ..Default::default()
            };
            let s = gen_dataset(&cfg, &out, seed).with_context(|| format!("generating into {}", out.display()))?;
            println!(
                "wrote {} images with {} instances to {} ({} skipped)",
                s.images,
                s.instances,
                out.display(),
                s.skipped
            );
        }
        Cmd::Train {
            data,
            out,
            seed,
            epochs,
            lr,
            proposals,
            k,
            batch_size,
            jitter,
            rec_channels,
            hidden,
            attention,
            val,
        } => {
            ensure_dataset(&data)?;
            if let Some(v) = &val {
                ensure_dataset(v)?;
            }
            let spot_cfg = SpotterConfig {
                k,
                rec_channels,
                hidden,
                attention,
                proposals,
                ..Default::default()
            };
            let train_cfg = TrainConfig {
                lr,
                batch_size,
                seed,
                jitter,
                ..TrainConfig::with_epochs(epochs)
            };
            spot_cfg.validate()?;
            train_cfg.validate()?;
            let train = Dataset::load(&data).context("loading training data")?;
            let holdout = match &val {
                Some(v) => Dataset::load(v).context("loading validation data")?,
                None => train.clone(),
            };
            fs::create_dir_all(&out)?;
            let ckpt = out.join("model.ckpt");
            let metrics_path = out.join("metrics.jsonl");
            let mut metrics = fs::File::create(&metrics_path)?;
            let mut spotter = Spotter::new(spot_cfg, seed)?;
            eprintln!(
                "training on {} images / {} instances, {} parameters",
                train.samples.len(),
                train.num_instances(),
                boundary_spot::micronet::Module::num_params(&spotter)
            );
            let start = Instant::now();
            train_loop(&mut spotter, &train.samples, &holdout.samples, &train_cfg, |m, s| {
                serde_json::to_writer(&mut metrics, m).map_err(boundary_spot::Error::from)?;
                metrics.write_all(b"\n")?;
                metrics.flush()?;
                save_checkpoint(s, &ckpt)?;
                eprintln!(
                    "epoch {:>3}  lr {:.4}  L_bp {:.5}  L_recog {:.5}  acc {:.3}  bp_err {:.3}px  [{:.0}s]",
                    m.epoch,
                    m.lr,
                    m.l_bp,
                    m.l_recog,
                    m.eval_accuracy,
                    m.eval_bp_error,
                    start.elapsed().as_secs_f64()
                );
                Ok(())
            })?;
            println!("wrote {} and {}", ckpt.display(), metrics_path.display());
        }
        Cmd::Spot {
            ckpt,
            data,
            out,
            jitter,
            seed,
        } => {
            ensure!(ckpt.is_file(), "checkpoint {} does not exist", ckpt.display());
            ensure_dataset(&data)?;
            let mut spotter = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let ds = Dataset::load(&data)?;
            let records = spotter.spot_samples(&ds.samples, jitter, seed)?;
            write_spots(&out, &records)?;
            let n: usize = records.iter().map(|r| r.spots.len()).sum();
            println!("wrote {n} spots for {} images to {}", records.len(), out.display());
        }
        Cmd::Eval {
            spots,
            data,
            mode,
            iou,
            report,
        } => {
            ensure!(spots.is_file(), "spots file {} does not exist", spots.display());
            ensure_dataset(&data)?;
            let records = load_spots(&spots).context("reading spots")?;
            let gts = load_annotations(&data.join(ANNOTATIONS_FILE)).context("reading annotations")?;
            let mut lexicon: Vec<String> =
                gts.iter().flat_map(|a| a.instances.iter().map(|i| i.text.clone())).collect();
            lexicon.sort();
            lexicon.dedup();
            let r = evaluate(&records, &gts, mode, &lexicon, iou)?;
            print!("{r}");
            let path = report.unwrap_or_else(|| {
                let mut p = spots.as_os_str().to_owned();
                p.push(".report.jsonl");
                PathBuf::from(p)
            });
            let mut f = fs::File::create(&path)?;
            for rec in r.records() {
                serde_json::to_writer(&mut f, &rec)?;
                f.write_all(b"\n")?;
            }
        }
        Cmd::Overlay { image, spots, out } => {
            let img = image::open(&image)
                .with_context(|| format!("reading {}", image.display()))?
                .to_luma8();
            let shapes = read_shapes(&spots, &image)?;
            overlay::draw(&img, &shapes)
                .save_with_format(&out, image::ImageFormat::Png)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("drew {} instances into {}", shapes.len(), out.display());
        }
        Cmd::Gradcheck { seed } => {
            let start = Instant::now();
            let report = gradcheck_suite(seed)?;
            print!("{report}");
            let ok = report.passed();
            println!(
                "{} in {:.1}s",
                if ok { "gradcheck passed" } else { "gradcheck FAILED" },
                start.elapsed().as_secs_f64()
            );
            return Ok(ok);
        }
    }
    Ok(true)
}

fn pairs(v: &[[f64; 2]]) -> Vec<Point2> {
    v.iter().map(|&[x, y]| Point2::new(x, y)).collect()
}

/// Shapes for `image` from a spots or annotations file. A record matches
/// when its image path ends with the image's file name; a file with a
/// single record always matches.
fn read_shapes(path: &Path, image: &Path) -> Result<Vec<overlay::Shape>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut records: Vec<(String, Vec<overlay::Shape>)> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        let rec = if value.get("spots").is_some() {
            let r: ImageSpots = serde_json::from_value(value)?;
            let shapes = r
                .spots
                .iter()
                .map(|s| overlay::Shape {
                    side_a: pairs(&s.side_a),
                    side_b: pairs(&s.side_b),
                    label: s.text.clone(),
                })
                .collect();
            (r.image, shapes)
        } else if value.get("instances").is_some() {
            let r: AnnotationRecord = serde_json::from_value(value)?;
            let shapes = r
                .instances
                .iter()
                .map(|s| overlay::Shape {
                    side_a: pairs(&s.side_a),
                    side_b: pairs(&s.side_b),
                    label: s.text.clone(),
                })
                .collect();
            (r.image, shapes)
        } else {
            bail!("{}:{}: neither a spots nor an annotation record", path.display(), n + 1);
        };
        records.push(rec);
    }
    if records.len() == 1 {
        return Ok(records.pop().expect("one record").1);
    }
    let matching: Vec<_> = records
        .into_iter()
        .filter(|(img, _)| Path::new(img).file_name().map(|f| f.to_string_lossy() == name).unwrap_or(false))
        .collect();
    match matching.len() {
        0 => Ok(Vec::new()),
        1 => Ok(matching.into_iter().next().expect("one match").1),
        _ => bail!("several records match {name}"),
    }
}
