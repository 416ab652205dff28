use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use demofactor::data::{filter_small_subpops, load_counts_csv, load_covariates_csv};
use demofactor::evaluation::{
    derive_seed, loco_cv, run_insample_experiment, run_missing_experiment, run_oos_experiment, CvConfig, CvModel,
    ExperimentConfig, Variant,
};
use demofactor::inference::{
    age_composition_diff, curve_rows, level_effects, nonlinear_effect, predictive_for_index, scenario_project,
    shape_effect, write_tidy_csv, TidyRow,
};
use demofactor::sampler::run_mcmc;
use demofactor::synthetic::{
    drop_one_per_curve, generate_baseline, generate_outlier_variant, generate_sparse_variant, GeneratorConfig,
};
use demofactor::{Covariates, Draws, ModelConfig, Panel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifest::Manifest;
use crate::{
    BenchmarkArgs, CvArgs, EffectsArgs, Experiment, ExperimentVariant, FitArgs, InputArgs, ScenarioArgs, SimVariant,
    SimulateArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    Ok(match path {
        Some(p) => ModelConfig::from_json_file(p)?,
        None => ModelConfig::default(),
    })
}

/// Panel and covariates, with small subpopulations filtered in lockstep.
fn load_inputs(input: &InputArgs, config: &ModelConfig) -> Result<(Panel, Covariates)> {
    let panel: Panel = load_counts_csv(&input.counts)?;
    let cov = match &input.covariates {
        Some(p) => {
            if !p.exists() {
                bail!(demofactor::Error::Invalid(format!("covariates file {} does not exist", p.display())));
            }
            load_covariates_csv(p, &panel.subpop_ids, &config.covariates.quadratic)?
        }
        None => {
            if !config.covariates.quadratic.is_empty() {
                bail!(demofactor::Error::Invalid(
                    "quadratic covariates declared but no covariates file given".into()
                ));
            }
            Covariates::intercept_only(panel.n())
        }
    };
    if input.min_total == 0 {
        return Ok((panel, cov));
    }
    let (kept, rows) = filter_small_subpops(&panel, input.min_total)?;
    log::info!("kept {} of {} subpopulations", kept.n(), panel.n());
    Ok((kept, cov.select_rows(&rows)))
}

fn with_inputs(mut m: Manifest, input: &InputArgs) -> Result<Manifest> {
    m = m.input(&input.counts)?;
    if let Some(p) = &input.covariates {
        m = m.input(p)?;
    }
    if let Some(p) = &input.config {
        m = m.input(p)?;
    }
    Ok(m)
}

fn ages_f64(ages: &[i64]) -> Vec<f64> {
    ages.iter().map(|&a| a as f64).collect()
}

pub fn fit(args: &FitArgs, argv: &[String]) -> Result<()> {
    let mut config = load_config(args.input.config.as_deref())?;
    if let Some(s) = args.seed {
        config.mcmc.seed = s;
    }
    if let Some(q) = args.q {
        config.q = q;
    }
    if let Some(b) = args.burnin {
        config.mcmc.burnin = b;
    }
    if let Some(d) = args.draws {
        config.mcmc.draws = d;
    }
    if let Some(t) = args.thin {
        config.mcmc.thin = t;
    }
    config.validate()?;
    let (panel, cov) = load_inputs(&args.input, &config)?;
    create_dir(&args.out)?;

    let draws = run_mcmc(&panel, &cov, &config)?;
    draws.to_json_file(&args.out.join("draws.json"))?;

    let predictive_seed = derive_seed(config.mcmc.seed, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(predictive_seed);
    let xs = ages_f64(&panel.ages);
    let mut rows: Vec<TidyRow> = Vec::new();
    let mut trace_counts = None;
    let trace_i = match &args.trace_subpop {
        Some(id) => panel.subpop_index(id)?,
        None => 0,
    };
    let trace_x = match args.trace_age {
        Some(age) => panel
            .ages
            .iter()
            .position(|&a| a == age)
            .ok_or_else(|| demofactor::Error::Invalid(format!("age {age} is not in the panel")))?,
        None => panel.a() / 2,
    };
    for (i, id) in panel.subpop_ids.iter().enumerate() {
        let pred = predictive_for_index(&draws, i, args.level, &mut rng)?;
        rows.extend(curve_rows("predictive_count", id, &xs, &pred.summary));
        if i == trace_i {
            trace_counts = Some(pred.counts.column(trace_x).into_owned());
        }
    }
    write_tidy_csv(&args.out.join("curves.csv"), &rows)?;
    write_acceptance(&args.out.join("acceptance.csv"), &draws)?;
    let trace_counts = trace_counts.ok_or_else(|| anyhow!("trace subpopulation not found"))?;
    write_trace(&args.out.join("trace.csv"), &draws, trace_i, trace_x, trace_counts.as_slice())?;

    let manifest = Manifest::new("fit", argv, &config)?
        .seed("mcmc", config.mcmc.seed)
        .seed("predictive", predictive_seed);
    with_inputs(manifest, &args.input)?.write(&args.out)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn write_acceptance(path: &Path, draws: &Draws) -> Result<()> {
    let meta = &draws.meta.model;
    let mut w = csv_writer(path)?;
    w.write_record(["subpop", "age", "acceptance"])?;
    for (i, id) in meta.subpop_ids.iter().enumerate() {
        for (x, age) in meta.ages.iter().enumerate() {
            let rate = draws.meta.acceptance[(i, x)].map(|r| r.to_string()).unwrap_or_default();
            w.write_record([id.clone(), age.to_string(), rate])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-draw trace of one cell: noise variance, linear predictor and a
/// posterior predictive count.
fn write_trace(path: &Path, draws: &Draws, i: usize, x: usize, counts: &[u64]) -> Result<()> {
    let meta = &draws.meta.model;
    let mut w = csv_writer(path)?;
    w.write_record(["draw", "subpop", "age", "sigma2", "linear_predictor", "predictive_count"])?;
    for (s, st) in draws.states.iter().enumerate() {
        let eta = st.alpha[i] + (st.phi.row(x) * st.lambda.row(i).transpose())[0] + meta.offsets[(i, x)];
        w.write_record([
            s.to_string(),
            meta.subpop_ids[i].clone(),
            meta.ages[x].to_string(),
            st.sigma2.to_string(),
            eta.to_string(),
            counts[s].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn load_draws(path: &Path) -> Result<Draws> {
    let file = if path.is_dir() { path.join("draws.json") } else { path.to_path_buf() };
    if !file.exists() {
        bail!(demofactor::Error::Invalid(format!("draws checkpoint {} does not exist", file.display())));
    }
    Ok(Draws::from_json_file(&file)?)
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Parse `name=v1,v2,...`.
fn parse_values(spec: &str) -> Result<(String, Vec<f64>)> {
    let (name, vals) = spec
        .split_once('=')
        .ok_or_else(|| demofactor::Error::Invalid(format!("expected name=values, got `{spec}`")))?;
    let values = vals
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| demofactor::Error::Invalid(format!("non-numeric value `{v}` in `{spec}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_string(), values))
}

pub fn effects(args: &EffectsArgs, argv: &[String]) -> Result<()> {
    let draws = load_draws(&args.draws)?;
    let out = args.out.clone().unwrap_or_else(|| checkpoint_dir(&args.draws));
    create_dir(&out)?;
    let meta = &draws.meta.model;

    let mut w = csv_writer(&out.join("level_effects.csv"))?;
    w.write_record(["covariate", "mean", "lo", "hi"])?;
    for c in level_effects(&draws, args.level)? {
        w.write_record([c.name, c.mean.to_string(), c.lo.to_string(), c.hi.to_string()])?;
    }
    w.flush()?;

    let xs = ages_f64(&meta.ages);
    let mut rows = Vec::new();
    for name in &meta.covariate_names {
        rows.extend(curve_rows("shape_effect", name, &xs, &shape_effect(&draws, name, args.level)?));
    }
    write_tidy_csv(&out.join("shape_effects.csv"), &rows)?;

    let requested: Vec<(String, Vec<f64>)> = args.nonlinear.iter().map(|s| parse_values(s)).collect::<Result<_>>()?;
    if meta.quad_pairs.is_empty() {
        if !requested.is_empty() {
            bail!(demofactor::Error::Invalid("the fit has no quadratic covariates".into()));
        }
        log::info!("no quadratic covariates registered; nonlinear surfaces skipped");
    } else {
        let mut rows = Vec::new();
        for &(lin, _) in &meta.quad_pairs {
            let name = &meta.covariate_names[lin];
            let values = match requested.iter().find(|(n, _)| n == name) {
                Some((_, v)) => v.clone(),
                None => observed_quartiles(meta.covariates.column(lin).iter().copied()),
            };
            let eff = nonlinear_effect(&draws, name, &values, args.level)?;
            for (v, slice) in values.iter().zip(&eff.slices) {
                rows.extend(curve_rows("nonlinear_effect", &format!("{name}={v}"), &xs, slice));
            }
        }
        for (n, _) in &requested {
            if !meta.quad_pairs.iter().any(|&(lin, _)| &meta.covariate_names[lin] == n) {
                bail!(demofactor::Error::Invalid(format!("covariate `{n}` has no quadratic companion")));
            }
        }
        write_tidy_csv(&out.join("nonlinear_effects.csv"), &rows)?;
    }
    Manifest::new("effects", argv, &draws.meta.config)?
        .input(&if args.draws.is_dir() { args.draws.join("draws.json") } else { args.draws.clone() })?
        .write(&out)
}

/// Lower quartile, median and upper quartile of the observed values.
fn observed_quartiles(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    [0.25, 0.5, 0.75]
        .iter()
        .map(|&p| v[((v.len() - 1) as f64 * p).round() as usize])
        .collect()
}

pub fn scenario(args: &ScenarioArgs, argv: &[String]) -> Result<()> {
    let draws = load_draws(&args.draws)?;
    create_dir(&args.out)?;
    let meta = &draws.meta.model;
    let i = draws.subpop_index(&args.subpop)?;
    let mut w: Vec<f64> = meta.covariates.row(i).iter().copied().collect();
    for spec in &args.set {
        let (name, vals) = parse_values(spec)?;
        let j = meta
            .covariate_names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| demofactor::Error::Invalid(format!("unknown covariate `{name}`")))?;
        if meta.quad_pairs.iter().any(|&(_, q)| q == j) {
            bail!(demofactor::Error::Invalid(format!(
                "`{name}` is a quadratic companion; set its linear covariate instead"
            )));
        }
        match vals.as_slice() {
            [v] => w[j] = *v,
            _ => bail!(demofactor::Error::Invalid(format!("`{spec}` must set exactly one value"))),
        }
    }
    for &(lin, quad) in &meta.quad_pairs {
        w[quad] = w[lin] * w[lin];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let sc = scenario_project(&draws, &args.subpop, &w, args.level, &mut rng)?;
    let xs = ages_f64(&meta.ages);
    let mut rows = curve_rows("baseline", &args.subpop, &xs, &sc.baseline);
    rows.extend(curve_rows("counterfactual", &args.subpop, &xs, &sc.counterfactual));
    rows.extend(curve_rows("difference", &args.subpop, &xs, &sc.difference));
    write_tidy_csv(&args.out.join("scenario.csv"), &rows)?;

    let mut t = csv_writer(&args.out.join("scenario_totals.csv"))?;
    t.write_record(["draw", "baseline_total", "counterfactual_total"])?;
    for (s, (b, c)) in sc.totals.iter().enumerate() {
        t.write_record([s.to_string(), b.to_string(), c.to_string()])?;
    }
    t.flush()?;

    if let Some(other) = &args.contrast {
        let diff = age_composition_diff(&draws, &args.subpop, other, args.level, &mut rng)?;
        let key = format!("{}-{other}", args.subpop);
        write_tidy_csv(
            &args.out.join("composition.csv"),
            &curve_rows("composition_difference", &key, &xs, &diff.summary),
        )?;
        if diff.skipped > 0 {
            log::info!("composition contrast skipped {} draws with zero totals", diff.skipped);
        }
    }
    Manifest::new("scenario", argv, &draws.meta.config)?
        .seed("scenario", args.seed)
        .input(&if args.draws.is_dir() { args.draws.join("draws.json") } else { args.draws.clone() })?
        .write(&args.out)
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<()> {
    let cfg = GeneratorConfig::baseline(args.n, args.a, args.noise);
    let truth = match args.variant {
        SimVariant::Baseline => generate_baseline::<f64>(args.seed, &cfg, None)?,
        SimVariant::Sparse => generate_sparse_variant::<f64>(args.seed, args.n, args.a, args.noise)?,
        SimVariant::Outlier => {
            let base = generate_baseline::<f64>(args.seed, &cfg, None)?;
            generate_outlier_variant(&base, derive_seed(args.seed, 1))?
        }
        SimVariant::Missing => {
            let base = generate_baseline::<f64>(args.seed, &cfg, None)?;
            drop_one_per_curve(&base, derive_seed(args.seed, 2))?
        }
    };
    truth.write(&args.out)?;
    #[derive(serde::Serialize)]
    struct SimConfig<'a> {
        variant: SimVariant,
        generator: &'a GeneratorConfig,
    }
    Manifest::new("simulate", argv, &SimConfig { variant: args.variant, generator: &truth.config })?
        .seed("generator", args.seed)
        .write(&args.out)
}

/// `1..10` (inclusive) or `2,4,6`.
fn parse_q_list(s: &str) -> Result<Vec<usize>> {
    let bad = || demofactor::Error::Invalid(format!("cannot parse factor counts `{s}`"));
    let list: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if list.is_empty() || list.contains(&0) {
        bail!(bad());
    }
    Ok(list)
}

pub fn cv(args: &CvArgs, argv: &[String]) -> Result<()> {
    let mut model = load_config(args.input.config.as_deref())?;
    model.mcmc.seed = args.seed;
    let (panel, cov) = load_inputs(&args.input, &model)?;
    let models = args
        .models
        .split(',')
        .map(|m| CvModel::parse(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = CvConfig {
        models,
        q_list: parse_q_list(&args.q)?,
        model,
        seed: args.seed,
        grid: Default::default(),
        level: args.level,
    };
    create_dir(&args.out)?;
    let table = loco_cv(&panel, &cov, &cfg)?;
    table.write_csv(&args.out.join("cv.csv"))?;
    let mut w = csv_writer(&args.out.join("cv_folds.csv"))?;
    w.write_record(["model", "q", "fold", "subpop", "rmse", "mae", "corr", "error"])?;
    for (m, q, f, score, err) in &table.folds {
        let (r, a, c) = match score {
            Some(s) => (s.rmse.to_string(), s.mae.to_string(), s.corr.to_string()),
            None => Default::default(),
        };
        w.write_record([
            m.clone(),
            q.to_string(),
            f.to_string(),
            panel.subpop_ids[*f].clone(),
            r,
            a,
            c,
            err.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let manifest = Manifest::new("cv", argv, &cfg)?.seed("cv", args.seed);
    with_inputs(manifest, &args.input)?.write(&args.out)
}

pub fn benchmark(args: &BenchmarkArgs, argv: &[String]) -> Result<()> {
    let mut cfg = if args.full {
        ExperimentConfig::full(100, 60, args.noise)
    } else {
        ExperimentConfig::desk_scale(args.noise)
    };
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    cfg.seed = args.seed;
    cfg.variant = match args.variant {
        ExperimentVariant::Baseline => Variant::Baseline,
        ExperimentVariant::Outlier => Variant::Outlier,
        ExperimentVariant::Sparse => Variant::Sparse,
    };
    let report = match args.experiment {
        Experiment::Insample => run_insample_experiment::<f64>(&cfg)?,
        Experiment::Missing => run_missing_experiment::<f64>(&cfg)?,
        Experiment::Oos => run_oos_experiment::<f64>(&cfg)?,
    };
    create_dir(&args.out)?;
    report.write_csv(&args.out.join("scores.csv"))?;
    let mut w = csv_writer(&args.out.join("summary.csv"))?;
    w.write_record(["model", "rmse", "mae", "mape", "corr", "succeeded", "failed"])?;
    for m in report.means() {
        w.write_record([
            m.model,
            m.rmse.to_string(),
            m.mae.to_string(),
            m.mape.to_string(),
            m.corr.to_string(),
            m.succeeded.to_string(),
            m.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Manifest::new("benchmark", argv, &cfg)?.seed("experiment", args.seed).write(&args.out)
}
