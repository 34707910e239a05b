//! Command implementations. Every command writes its outputs plus a run
//! manifest (`<out>.manifest.json`) that records the exact arguments; the
//! rerun command replays a manifest and reproduces the outputs byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use survcf::{
    closest_feasible_train, feature_bounds, fit_cox, fit_rsf, generate_synthetic, load_csv,
    sample_nearest_feasible, solve_counterfactual_pso, write_csv, CounterfactualQuery,
    CoxFitOptions, CsvSchema, Dataset, GeneratorConfig, ModelFile, ModelMeta, RsfOptions,
    SearchRegion, SurvivalModel, SwarmConfig,
};

use crate::args::{
    Command, ExplainArgs, FitArgs, GenerateArgs, Method, ModelKind, RerunArgs, SchemaArgs,
    SurfaceArgs, Verifier, VerifyArgs,
};
use crate::report::{
    ball_outline, box_outline, table_row, ExplainDocument, SampledSection, SurfaceOverlay,
};

pub enum CliError {
    Usage(String),
    Core(survcf::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl From<survcf::Error> for CliError {
    fn from(err: survcf::Error) -> Self {
        CliError::Core(err)
    }
}

impl CliError {
    /// 2 usage or bad input, 3 infeasible query, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use survcf::Error::*;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(err) => match err {
                ShiftOutOfRange { .. } | InfeasibleRegion | NoFeasibleSample { .. }
                | MissingRadius => 3,
                RootBracketFailed | NonFiniteObjective => 4,
                _ => 2,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: Command,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
    pub wall_clock_ms: u64,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".manifest.json");
    out.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(survcf::Error::from)?;
    fs::write(path, json + "\n").map_err(survcf::Error::from)?;
    Ok(())
}

struct Execution {
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Rerun(args) => rerun(args),
        other => {
            let manifest_out = primary_out(&other);
            let recorded = other.clone();
            let started = Instant::now();
            let execution = dispatch(other)?;
            let manifest = RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: recorded,
                outputs: execution
                    .outputs
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
                config: execution.config,
                wall_clock_ms: started.elapsed().as_millis() as u64,
            };
            write_json(&manifest_path(&manifest_out), &manifest)?;
            Ok(())
        }
    }
}

fn primary_out(command: &Command) -> PathBuf {
    match command {
        Command::Generate(a) => a.out.clone(),
        Command::Fit(a) => a.out.clone(),
        Command::Explain(a) => a.out.clone(),
        Command::Verify(a) => a.out.clone(),
        Command::Surface(a) => a.out.clone(),
        Command::Rerun(_) => unreachable!("rerun handled before dispatch"),
    }
}

fn dispatch(command: Command) -> CliResult<Execution> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Fit(args) => fit(args),
        Command::Explain(args) => explain(args),
        Command::Verify(args) => verify(args),
        Command::Surface(args) => surface(args),
        Command::Rerun(_) => unreachable!("rerun handled before dispatch"),
    }
}

fn rerun(args: RerunArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.manifest).map_err(survcf::Error::from)?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(survcf::Error::from)?;
    run(manifest.command)
}

// ---- generate ---------------------------------------------------------

fn generate(args: GenerateArgs) -> CliResult<Execution> {
    let config = match &args.coeffs {
        Some(list) => {
            if list.0.len() != args.d {
                return Err(usage(format!(
                    "--coeffs has {} entries but --d is {}",
                    list.0.len(),
                    args.d
                )));
            }
            GeneratorConfig {
                n: args.n,
                d: args.d,
                lambda0: args.lambda0,
                shape: args.shape,
                coeffs: list.0.clone(),
                event_prob: args.event_prob,
                seed: args.seed,
            }
        }
        None => GeneratorConfig {
            lambda0: args.lambda0,
            shape: args.shape,
            event_prob: args.event_prob,
            ..GeneratorConfig::with_random_coeffs(args.n, args.d, args.seed)
        },
    };
    let dataset = generate_synthetic(&config)?;
    write_csv(&args.out, &dataset, None)?;
    println!(
        "generated {} records ({} events) with d = {} into {}",
        dataset.len(),
        dataset.n_events(),
        dataset.dim(),
        args.out.display()
    );
    Ok(Execution {
        outputs: vec![args.out.clone()],
        config: serde_json::to_value(&config).map_err(survcf::Error::from)?,
    })
}

// ---- fit ---------------------------------------------------------------

fn parse_filter(filter: &Option<String>) -> CliResult<Option<(String, String)>> {
    match filter {
        None => Ok(None),
        Some(spec) => match spec.split_once('=') {
            Some((col, value)) => Ok(Some((col.trim().to_string(), value.trim().to_string()))),
            None => Err(usage(format!(
                "--filter expects column=value, got '{spec}'"
            ))),
        },
    }
}

/// Resolve the column mapping; when --features is omitted every column
/// except time, event, and the filter column becomes a feature.
fn resolve_schema(data: &Path, schema: &SchemaArgs) -> CliResult<CsvSchema> {
    let filter = parse_filter(&schema.filter)?;
    let feature_cols = if schema.features.is_empty() {
        let mut reader = csv::Reader::from_path(data).map_err(survcf::Error::from)?;
        let headers = reader.headers().map_err(survcf::Error::from)?.clone();
        headers
            .iter()
            .filter(|name| {
                *name != schema.time_col
                    && *name != schema.event_col
                    && filter.as_ref().map_or(true, |(col, _)| *name != col)
            })
            .map(str::to_string)
            .collect()
    } else {
        schema.features.clone()
    };
    if feature_cols.is_empty() {
        return Err(usage("no feature columns left after excluding time/event"));
    }
    let mut resolved = CsvSchema::new(feature_cols, &schema.time_col, &schema.event_col);
    if let Some((col, value)) = filter {
        resolved = resolved.with_filter(&col, &value);
    }
    Ok(resolved)
}

fn load_dataset(data: &Path, schema: &SchemaArgs) -> CliResult<(Dataset, CsvSchema, usize)> {
    let resolved = resolve_schema(data, schema)?;
    let (dataset, dropped) = load_csv(data, &resolved)?;
    if dropped > 0 {
        eprintln!("note: dropped {dropped} rows with missing values");
    }
    Ok((dataset, resolved, dropped))
}

fn fit(args: FitArgs) -> CliResult<Execution> {
    let (dataset, schema, dropped) = load_dataset(&args.data, &args.schema)?;
    let scaling = args
        .scale_minmax
        .then(|| survcf::MinMaxScaling::from_dataset(&dataset));
    let fit_data = match &scaling {
        Some(scaling) => scaling.scale_dataset(&dataset)?,
        None => dataset.clone(),
    };

    let base_meta = |kind: &str| {
        ModelMeta::new(kind)
            .with_scaling(scaling.clone())
            .insert("feature_names", json!(schema.feature_cols))
            .insert("n_records", json!(fit_data.len()))
            .insert("n_events", json!(fit_data.n_events()))
            .insert("dropped_rows", json!(dropped))
    };

    let file = match args.model {
        ModelKind::Cox => {
            let options = CoxFitOptions {
                l2_penalty: args.l2,
                tolerance: args.tolerance,
                max_iter: args.max_iter,
                t_gamma: args.t_gamma,
            };
            let (model, report) = fit_cox(&fit_data, &options)?;
            println!(
                "cox fit: converged = {}, iterations = {}, gradient norm = {:.3e}, log PL = {:.6}",
                report.converged,
                report.iterations,
                report.gradient_norm,
                report.log_partial_likelihood
            );
            if !report.converged {
                eprintln!(
                    "warning: fit did not converge within {} iterations",
                    args.max_iter
                );
            }
            let meta = base_meta("cox")
                .insert("l2_penalty", json!(args.l2))
                .insert("converged", json!(report.converged))
                .insert("iterations", json!(report.iterations))
                .insert("gradient_norm", json!(report.gradient_norm))
                .insert(
                    "log_partial_likelihood",
                    json!(report.log_partial_likelihood),
                );
            ModelFile::cox(model, meta)
        }
        ModelKind::Rsf => {
            let options = RsfOptions {
                n_trees: args.trees,
                mtry: args.mtry,
                min_leaf: args.min_leaf,
                seed: args.seed,
                t_gamma: args.t_gamma,
            };
            let forest = fit_rsf(&fit_data, &options)?;
            println!(
                "rsf fit: {} trees, min_leaf = {}, seed = {}",
                forest.n_trees(),
                args.min_leaf,
                args.seed
            );
            let meta = base_meta("rsf")
                .insert("n_trees", json!(args.trees))
                .insert("mtry", json!(args.mtry))
                .insert("min_leaf", json!(args.min_leaf))
                .insert("seed", json!(args.seed));
            ModelFile::rsf(forest, meta)
        }
    };
    file.save(&args.out)?;
    println!("model written to {}", args.out.display());
    Ok(Execution {
        outputs: vec![args.out.clone()],
        config: json!({
            "schema": schema,
            "scale_minmax": args.scale_minmax,
        }),
    })
}

// ---- explain -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SwarmSettingsFile {
    n_particles: usize,
    n_iterations: usize,
    phi1: f64,
    phi2: f64,
    kappa: f64,
    seed: u64,
}

fn swarm_config(args: &ExplainArgs) -> CliResult<SwarmConfig> {
    let settings = match &args.pso_config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(survcf::Error::from)?;
            serde_json::from_str(&text).map_err(survcf::Error::from)?
        }
        None => SwarmSettingsFile {
            n_particles: args.particles,
            n_iterations: args.iterations,
            phi1: args.phi1,
            phi2: args.phi2,
            kappa: args.kappa,
            seed: args.seed,
        },
    };
    Ok(SwarmConfig::constricted(
        settings.n_particles,
        settings.n_iterations,
        settings.phi1,
        settings.phi2,
        settings.kappa,
        settings.seed,
    )?)
}

fn query_point(args: &ExplainArgs, dataset: &Dataset) -> CliResult<Vec<f64>> {
    match (&args.x, args.x_row) {
        (Some(list), None) => Ok(list.0.clone()),
        (None, Some(row)) => dataset
            .records()
            .get(row)
            .map(|rec| rec.features.clone())
            .ok_or_else(|| {
                usage(format!(
                    "--x-row {row} out of range (dataset has {} rows)",
                    dataset.len()
                ))
            }),
        _ => Err(usage("exactly one of --x or --x-row is required")),
    }
}

fn run_sampling(
    query: &CounterfactualQuery,
    model: &dyn SurvivalModel,
    region: &SearchRegion,
    samples: u64,
    seed: u64,
) -> CliResult<(SampledSection, survcf::SampleSearch)> {
    let search = sample_nearest_feasible(query, model, region, samples, seed)?;
    let shift = match &search.z {
        Some(z) => Some(query.feasibility_gap(model, z).map(|gap| query.r - gap)?),
        None => None,
    };
    Ok((
        SampledSection {
            z: search.z.clone(),
            distance: search.distance,
            shift,
            n_samples: search.n_samples,
            n_feasible: search.n_feasible,
            seed: search.seed,
        },
        search,
    ))
}

fn explain(args: ExplainArgs) -> CliResult<Execution> {
    let file = ModelFile::load(&args.model_file)?;
    let model = file.black_box();
    let (dataset, schema, _) = load_dataset(&args.data, &args.schema)?;
    let x = query_point(&args, &dataset)?;
    let query = CounterfactualQuery::new(x, args.theta, args.r, args.penalty)?;

    let bounds = feature_bounds(&dataset);
    let anchor = closest_feasible_train(&query, model.as_ref(), &dataset)?;
    let mut region = SearchRegion::new(bounds.clone(), query.x.clone())?;
    if anchor.feasible_found {
        region = region.with_radius(anchor.radius)?;
    }

    let manifest = manifest_path(&args.out).display().to_string();
    let mut sampled = None;
    let document = match args.method {
        Method::Exact => {
            let solution = file.solve_exact(&query, &bounds)?;
            if args.verify {
                let (section, _) =
                    run_sampling(&query, model.as_ref(), &region, args.samples, args.seed)?;
                sampled = Some(section);
            }
            let report = survcf::build_report(
                &query,
                model.as_ref(),
                Some(solution.z.clone()),
                None,
                None,
                None,
                None,
            )?;
            println!(
                "exact: achieved shift {:.6} (requested {:.6}), distance {:.6}",
                solution.achieved_shift, args.r, solution.distance
            );
            ExplainDocument {
                method: "exact".into(),
                report,
                loss_opt: None,
                predictor_root: Some(solution.predictor_root),
                verifier: Some("exact".into()),
                sampled,
                anchor: Some(anchor),
                region: Some(region),
                model_file: args.model_file.display().to_string(),
                manifest,
            }
        }
        Method::Pso => {
            let config = swarm_config(&args)?;
            let solution = solve_counterfactual_pso(&query, model.as_ref(), &dataset, &config)?;
            let mut z_ver = None;
            let mut oracle_meta = (None, None, None);
            if args.verify {
                let (section, search) =
                    run_sampling(&query, model.as_ref(), &region, args.samples, args.seed)?;
                if section.n_feasible == 0 {
                    eprintln!(
                        "warning: sampling oracle found no feasible point in {} samples",
                        section.n_samples
                    );
                }
                z_ver = search.z;
                oracle_meta = (
                    Some(search.n_samples),
                    Some(search.n_feasible),
                    Some(search.seed),
                );
                sampled = Some(section);
            }
            let report = survcf::build_report(
                &query,
                model.as_ref(),
                z_ver,
                Some(solution.z.clone()),
                oracle_meta.0,
                oracle_meta.1,
                oracle_meta.2,
            )?;
            println!(
                "pso: achieved shift {:.6} (requested {:.6}), distance {:.6}, loss {:.6}",
                solution.shift, args.r, solution.distance, solution.loss
            );
            ExplainDocument {
                method: "pso".into(),
                report,
                loss_opt: Some(solution.loss),
                predictor_root: None,
                verifier: args.verify.then(|| "sampling".into()),
                sampled,
                anchor: Some(solution.anchor),
                region: Some(solution.region),
                model_file: args.model_file.display().to_string(),
                manifest,
            }
        }
    };

    write_json(&args.out, &document)?;
    println!("report written to {}", args.out.display());
    Ok(Execution {
        outputs: vec![args.out.clone()],
        config: json!({
            "schema": schema,
            "x": document.report.x,
        }),
    })
}

// ---- verify ------------------------------------------------------------

fn verify(args: VerifyArgs) -> CliResult<Execution> {
    if args.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let text = fs::read_to_string(&args.report).map_err(survcf::Error::from)?;
    let document: ExplainDocument = serde_json::from_str(&text).map_err(survcf::Error::from)?;
    let file = ModelFile::load(&args.model_file)?;
    let model = file.black_box();
    let query = CounterfactualQuery::new(
        document.report.x.clone(),
        document.report.theta,
        document.report.r,
        document.report.c,
    )?;
    let region = document
        .region
        .clone()
        .ok_or_else(|| usage("report lacks a search region; re-run explain first"))?;

    let use_exact = match args.verifier {
        Verifier::Exact => true,
        Verifier::Sample => false,
        Verifier::Auto => file.model.kind() == "cox",
    };

    let manifest = manifest_path(&args.out).display().to_string();
    let (z_ver, predictor_root, verifier_name, sampled, oracle_meta) = if use_exact {
        let solution = file.solve_exact(&query, &region.bounds)?;
        (
            solution.z,
            Some(solution.predictor_root),
            "exact",
            document.sampled.clone(),
            (None, None, None),
        )
    } else {
        let (section, search) =
            run_sampling(&query, model.as_ref(), &region, args.samples, args.seed)?;
        let (z, _) = search.require_feasible()?;
        (
            z.to_vec(),
            None,
            "sampling",
            Some(section),
            (
                Some(search.n_samples),
                Some(search.n_feasible),
                Some(search.seed),
            ),
        )
    };

    let report = survcf::build_report(
        &query,
        model.as_ref(),
        Some(z_ver),
        document.report.z_opt.clone(),
        oracle_meta.0,
        oracle_meta.1,
        oracle_meta.2,
    )?;
    let (header, row) = table_row(&report, file.model.kind());
    let verified = ExplainDocument {
        method: document.method,
        report,
        loss_opt: document.loss_opt,
        predictor_root,
        verifier: Some(verifier_name.into()),
        sampled,
        anchor: document.anchor,
        region: Some(region),
        model_file: args.model_file.display().to_string(),
        manifest,
    };
    write_json(&args.out, &verified)?;
    println!(
        "verified via {verifier_name}: r_ver = {:?}, dist_ver = {:?}",
        verified.report.r_ver, verified.report.dist_ver
    );

    let mut outputs = vec![args.out.clone()];
    if let Some(csv_path) = &args.csv {
        let mut writer = csv::Writer::from_path(csv_path).map_err(survcf::Error::from)?;
        writer.write_record(&header).map_err(survcf::Error::from)?;
        writer.write_record(&row).map_err(survcf::Error::from)?;
        writer.flush().map_err(survcf::Error::from)?;
        outputs.push(csv_path.clone());
    }
    println!("verified report written to {}", args.out.display());
    Ok(Execution {
        outputs,
        config: json!({ "verifier": verifier_name, "samples": args.samples, "seed": args.seed }),
    })
}

// ---- surface -----------------------------------------------------------

fn surface(args: SurfaceArgs) -> CliResult<Execution> {
    if args.resolution < 2 {
        return Err(usage("--resolution must be at least 2"));
    }
    let file = ModelFile::load(&args.model_file)?;
    let model = file.black_box();
    if model.dim() != 2 {
        return Err(usage(format!(
            "surface needs a 2-feature model, this one has {}",
            model.dim()
        )));
    }
    let (dataset, schema, _) = load_dataset(&args.data, &args.schema)?;
    let bounds = feature_bounds(&dataset);

    let res = args.resolution;
    let axis = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (res - 1) as f64;
    let mut writer = csv::Writer::from_path(&args.out).map_err(survcf::Error::from)?;
    writer
        .write_record(["x1", "x2", "mean"])
        .map_err(survcf::Error::from)?;
    for i in 0..res {
        let x1 = axis(bounds.lower()[0], bounds.upper()[0], i);
        for j in 0..res {
            let x2 = axis(bounds.lower()[1], bounds.upper()[1], j);
            let mean = model.mean(&[x1, x2])?;
            writer
                .write_record([format!("{x1}"), format!("{x2}"), format!("{mean}")])
                .map_err(survcf::Error::from)?;
        }
    }
    writer.flush().map_err(survcf::Error::from)?;

    let overlay_path = {
        let stem = args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "surface".into());
        args.out.with_file_name(format!("{stem}_overlay.json"))
    };
    let mut overlay = SurfaceOverlay {
        box_outline: box_outline(bounds.lower(), bounds.upper()),
        ball_outline: None,
        x: None,
        z_ver: None,
        z_opt: None,
        manifest: manifest_path(&args.out).display().to_string(),
    };
    if let Some(report_path) = &args.report {
        let text = fs::read_to_string(report_path).map_err(survcf::Error::from)?;
        let document: ExplainDocument =
            serde_json::from_str(&text).map_err(survcf::Error::from)?;
        overlay.x = Some(document.report.x.clone());
        overlay.z_ver = document.report.z_ver.clone();
        overlay.z_opt = document.report.z_opt.clone();
        if let Some(region) = &document.region {
            if let Some(radius) = region.radius {
                overlay.ball_outline = Some(ball_outline(&region.center, radius));
            }
        }
    }
    write_json(&overlay_path, &overlay)?;
    println!(
        "surface grid ({res} x {res}) written to {}, overlay to {}",
        args.out.display(),
        overlay_path.display()
    );
    Ok(Execution {
        outputs: vec![args.out.clone(), overlay_path],
        config: json!({ "schema": schema, "resolution": res }),
    })
}
