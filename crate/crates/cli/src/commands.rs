use bigssa::{
    bayes_interval, default_knots, fit as fit_model, predict as predict_model, risk_sweep,
    run_benchmark, FitResult, ModelSpec, RiskConfig, Scenario,
};
use nalgebra::DMatrix;

use crate::data::{ColumnKind, ColumnSchema, Table};
use crate::document::{emit, write_atomic, ModelDocument};
use crate::error::{CliError, Result};
use crate::{FitArgs, ModelArgs, PredictArgs, RiskArgs, SimulateArgs};

struct Prepared {
    schema: ColumnSchema,
    model: ModelSpec,
    y: Vec<f64>,
    x: DMatrix<f64>,
}

fn prepare(args: &ModelArgs) -> Result<Prepared> {
    let table = Table::read(&args.data)?;
    let schema = ColumnSchema::from_table(&table, &args.response, &args.continuous, &args.nominal)?;
    let knots = args
        .knots
        .map_or_else(|| default_knots(schema.predictors.len()), |k| k as usize);
    let model = schema.model(args.order, knots, args.seed, args.interactions)?;
    let y = schema.response(&table)?;
    let x = schema.predictors(&table)?;
    Ok(Prepared { schema, model, y, x })
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let out_err = |source| CliError::Csv {
        path: "<output>".into(),
        source,
    };
    w.write_record(header).map_err(out_err)?;
    for row in rows {
        w.write_record(row).map_err(out_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: "<output>".into(),
        source: e.into_error(),
    })
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let p = prepare(&args.model)?;
    let rounding = p.schema.rounding()?;
    let fitted = fit_model(&p.y, &p.x, &rounding, &p.model)?;
    let doc = ModelDocument::new(p.schema, fitted);
    write_atomic(&args.out, &doc.to_json()?)?;
    print_summary(&doc.fit);
    println!("model     {}", args.out.display());
    Ok(())
}

fn print_summary(f: &FitResult) {
    let theta: Vec<String> = f.theta.iter().map(|t| num(*t)).collect();
    println!("n         {}", f.n);
    println!("u         {}", f.u);
    println!("q         {}", f.q());
    println!("lambda    {}", f.lambda);
    println!("theta     {}", theta.join(" "));
    println!("gcv       {}", f.gcv);
    println!("edf       {}", f.edf);
    println!("r_squared {}", f.r_squared);
}

/// Raw labels and coded inputs of every grid point.
fn grid_points(doc: &ModelDocument, g: usize) -> (Vec<Vec<String>>, DMatrix<f64>) {
    let axes: Vec<Vec<(String, f64)>> = doc
        .columns
        .predictors
        .iter()
        .zip(&doc.fit.scales)
        .map(|(col, scale)| match (&col.kind, scale) {
            (ColumnKind::Nominal { levels }, _) => levels
                .iter()
                .enumerate()
                .map(|(k, l)| (l.clone(), (k + 1) as f64))
                .collect(),
            (ColumnKind::Continuous { .. }, Some(s)) => (0..g)
                .map(|k| {
                    let v = if k + 1 == g {
                        s.max
                    } else {
                        s.from_unit(k as f64 / (g - 1) as f64).clamp(s.min, s.max)
                    };
                    (num(v), v)
                })
                .collect(),
            (ColumnKind::Continuous { .. }, None) => unreachable!("continuous predictor without scale"),
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let p = axes.len();
    let mut labels = Vec::with_capacity(total);
    let mut x = DMatrix::zeros(total, p);
    for i in 0..total {
        let mut rest = i;
        let mut row = vec![String::new(); p];
        for j in (0..p).rev() {
            let (label, v) = &axes[j][rest % axes[j].len()];
            rest /= axes[j].len();
            row[j] = label.clone();
            x[(i, j)] = *v;
        }
        labels.push(row);
    }
    (labels, x)
}

fn check_ranges(doc: &ModelDocument, table: &Table, x: &DMatrix<f64>) -> Result<()> {
    for (j, scale) in doc.fit.scales.iter().enumerate() {
        let Some(s) = scale else { continue };
        for (i, (line, _)) in table.rows.iter().enumerate() {
            let v = x[(i, j)];
            if v < s.min || v > s.max {
                return Err(table.row_error(
                    *line,
                    format!(
                        "{} = {v} outside the training range [{}, {}]",
                        doc.columns.predictors[j].name, s.min, s.max
                    ),
                ));
            }
        }
    }
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    if let Some(level) = args.level {
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Usage(format!("--level must lie in (0, 1), got {level}")));
        }
    }
    let doc = ModelDocument::load(&args.model)?;
    let (labels, x) = match (&args.data, args.grid) {
        (Some(path), _) => {
            let table = Table::read(path)?;
            let x = doc.columns.predictors(&table)?;
            check_ranges(&doc, &table, &x)?;
            let cols: Vec<usize> = doc
                .columns
                .predictors
                .iter()
                .map(|p| table.column(&p.name))
                .collect::<Result<_>>()?;
            let labels = table
                .rows
                .iter()
                .map(|(_, rec)| cols.iter().map(|&c| rec[c].trim().to_string()).collect())
                .collect();
            (labels, x)
        }
        (None, Some(g)) => grid_points(&doc, g as usize),
        (None, None) => unreachable!("clap requires --data or --grid"),
    };
    let yhat = predict_model(&doc.fit, &x)?;
    let half = args
        .level
        .map(|level| bayes_interval(&doc.fit, &x, level))
        .transpose()?;

    let mut header: Vec<String> = doc.columns.predictors.iter().map(|p| p.name.clone()).collect();
    header.push("yhat".into());
    if half.is_some() {
        header.extend(["lower".into(), "upper".into()]);
    }
    let rows: Vec<Vec<String>> = labels
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            row.push(num(yhat[i]));
            if let Some(h) = &half {
                row.push(num(yhat[i] - h[i]));
                row.push(num(yhat[i] + h[i]));
            }
            row
        })
        .collect();
    emit(args.out.as_deref(), &csv_bytes(&header, &rows)?)
}

pub fn risk(args: &RiskArgs) -> Result<()> {
    if args.r_values.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(CliError::Usage("every --r value must lie in (0, 1]".into()));
    }
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let p = prepare(&args.model)?;
    let config = RiskConfig {
        subsample: args.subsample,
        replications: args.reps,
        seed: args.model.seed,
    };
    let report = risk_sweep(&p.y, &p.x, &p.model, &args.r_values, &config)?;

    let header: Vec<String> = [
        "r",
        "replication",
        "loss",
        "bias",
        "trace",
        "risk_hat",
        "lambda_1r",
        "rel_risk_bound",
        "taylor_bound",
        "d_nr",
        "sigma2_hat",
        "eta_sqnorm",
    ]
    .map(String::from)
    .to_vec();
    let mut rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|row| {
            vec![
                num(row.r),
                row.replication.to_string(),
                num(row.loss),
                num(row.bias),
                num(row.trace),
                num(row.risk_hat),
                num(row.lambda_1r),
                num(row.rel_risk_bound),
                opt(row.taylor_bound),
                num(row.d_nr),
                num(row.sigma2_hat),
                num(row.eta_sqnorm),
            ]
        })
        .collect();
    for (k, &r) in report.r_values.iter().enumerate() {
        rows.push(vec![
            num(r),
            "median".into(),
            num(report.loss[k]),
            String::new(),
            String::new(),
            num(report.risk_hat[k]),
            String::new(),
            num(report.rel_risk_bound[k]),
            opt(report.taylor_bound[k]),
            num(report.d_nr[k]),
            String::new(),
            String::new(),
        ]);
    }
    emit(args.out.as_deref(), &csv_bytes(&header, &rows)?)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let header: Vec<String> = [
        "function",
        "n",
        "r",
        "q",
        "sigma",
        "replication",
        "u",
        "mse",
        "runtime_s",
        "gcv",
        "lambda",
        "edf",
    ]
    .map(String::from)
    .to_vec();
    let r_label = |r: Option<f64>| r.map_or_else(|| "none".to_string(), num);
    let mut rows = Vec::new();
    for &function in &args.functions {
        for &n in &args.n {
            for &r in &args.r_values {
                let q = args
                    .q
                    .map_or_else(|| default_knots(function.p()), |q| q as usize);
                let sc = Scenario {
                    sigma: args.sigma,
                    replications: args.reps,
                    seed: args.seed,
                    ..Scenario::new(function, n, r, q)
                };
                sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                let result = run_benchmark(&sc)?;
                let lead = |rep: String| {
                    vec![function.to_string(), n.to_string(), r_label(r), q.to_string(), num(sc.sigma), rep]
                };
                for row in &result.rows {
                    let mut line = lead(row.replication.to_string());
                    line.extend([
                        row.u.to_string(),
                        num(row.mse),
                        num(row.runtime_s),
                        num(row.gcv),
                        num(row.lambda),
                        num(row.edf),
                    ]);
                    rows.push(line);
                }
                let mut median = lead("median".into());
                median.extend([
                    String::new(),
                    num(result.median_mse),
                    num(result.median_runtime_s),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                rows.push(median);
            }
        }
    }
    emit(args.out.as_deref(), &csv_bytes(&header, &rows)?)
}
