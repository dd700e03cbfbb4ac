//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Criteria 7, 8 and 10 read subject 1 from `$GRAPHMIND_EEGMMIDB`
//! when set and fall back to a synthetic subject otherwise.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use graphmind::config::{GraphSource, RunConfig};
use graphmind::data::synth::{write_synthetic_dataset, SynthConfig};
use graphmind::data::{cache_to_bytes, ingest, segments_to_tensor, Segment, SplitMode};
use graphmind::gcn::{gcn_train, GcnConfig, GcnModel};
use graphmind::graph::{
    chebyshev_conv, dense_lambda_max, graclus_coarsen, normalized_laplacian, pearson_matrix, scale_laplacian,
    CorrelationGraph,
};
use graphmind::metrics::{classification_metrics, confusion_matrix, roc_auc, EvalReport};
use graphmind::pipeline::{plan_folds, run_fold};
use graphmind::recurrent::{
    attention_weights, bilstm_forward, lstm_cell_step, stage1_train, Attention, LstmCell, Stage1Config, Stage1Model,
};
use graphmind::tensor::{
    gradient_check, gradient_check_params, one_hot, GradCheckReport, Mode, OptimizerKind, ParamStore, SeedStream,
    Tape, Tensor, Var,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run(id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let over = budget.is_some_and(|b| elapsed > b);
    let limit = budget.map_or(String::new(), |b| format!(" / {:.0} s", b.as_secs_f64()));
    let (passed, detail) = match result {
        Ok(d) if over => (false, format!("over time budget; {d}")),
        Ok(d) => (true, d),
        Err(e) => (false, e),
    };
    println!(
        "criterion {id:>2} {} {name} ({:.1} s{limit}): {detail}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    passed
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < density {
                let w = rng.gen_range(0.01..1.0);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    a
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

// ---------------------------------------------------------------- 1

/// Contracts `y` with a fixed random tensor so every output entry matters.
fn probe(t: &mut Tape, y: Var, seed: u64) -> graphmind::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = t.constant(random_tensor(&mut rng, &t.shape(y).to_vec()));
    let m = t.mul(y, r)?;
    Ok(t.sum(m))
}

struct GradSuite {
    failures: Vec<String>,
    worst: f64,
    checks: usize,
}

impl GradSuite {
    fn record(&mut self, name: &str, report: graphmind::Result<GradCheckReport>) {
        self.checks += 1;
        match report {
            Ok(r) => {
                self.worst = self.worst.max(r.max_rel_error);
                if !r.passed {
                    self.failures.push(format!("{name}: {:.2e} {:?}", r.max_rel_error, r.diagnostic));
                }
            }
            Err(e) => self.failures.push(format!("{name}: {e}")),
        }
    }

    fn op<F>(&mut self, name: &str, shape: &[usize], seed: u64, f: F)
    where
        F: Fn(&mut Tape, Var) -> graphmind::Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = random_tensor(&mut rng, shape);
        let report = gradient_check(
            |t, th| {
                let y = f(t, th)?;
                probe(t, y, seed + 1000)
            },
            &theta,
            TOL,
        );
        self.record(name, report);
    }
}

const TOL: f64 = 1e-4;

/// Checks the gradient with respect to `input` alone: the model weights are
/// copied in as buffers with unchanged ids, and the input is the only
/// trainable entry.
fn input_check<F>(store: &ParamStore, input: &Tensor, f: F) -> graphmind::Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore, Var) -> graphmind::Result<Var>,
{
    let mut frozen = ParamStore::new();
    for id in store.ids() {
        frozen.buffer(store.name(id), store.get(id).clone());
    }
    let id = frozen.weight("input", input.clone());
    gradient_check_params(
        &frozen,
        |t, st| {
            let v = t.param(st, id);
            f(t, st, v)
        },
        TOL,
        usize::MAX,
    )
}

fn criterion_gradients() -> Check {
    let mut s = GradSuite {
        failures: Vec::new(),
        worst: 0.0,
        checks: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let b34 = random_tensor(&mut rng, &[3, 4]);
    let b42 = random_tensor(&mut rng, &[4, 2]);
    let b242 = random_tensor(&mut rng, &[2, 4, 2]);
    let b234 = random_tensor(&mut rng, &[2, 3, 4]);
    let bias4 = random_tensor(&mut rng, &[4]);
    let c = |t: &mut Tape, x: &Tensor| t.constant(x.clone());

    s.op("matmul.lhs", &[3, 4], 1, |t, x| {
        let b = c(t, &b42);
        t.matmul(x, b)
    });
    s.op("matmul.rhs", &[4, 2], 2, |t, x| {
        let a = c(t, &b34);
        t.matmul(a, x)
    });
    s.op("batch_matmul.lhs", &[2, 3, 4], 3, |t, x| {
        let b = c(t, &b242);
        t.batch_matmul(x, b)
    });
    s.op("batch_matmul.rhs", &[2, 4, 2], 4, |t, x| {
        let a = c(t, &b234);
        t.batch_matmul(a, x)
    });
    s.op("add", &[3, 4], 5, |t, x| {
        let b = c(t, &b34);
        t.add(b, x)
    });
    s.op("sub.lhs", &[3, 4], 6, |t, x| {
        let b = c(t, &b34);
        t.sub(x, b)
    });
    s.op("sub.rhs", &[3, 4], 7, |t, x| {
        let b = c(t, &b34);
        t.sub(b, x)
    });
    s.op("mul", &[3, 4], 8, |t, x| {
        let b = c(t, &b34);
        t.mul(x, b)
    });
    s.op("mul.self", &[3, 4], 9, |t, x| t.mul(x, x));
    s.op("add_bias.input", &[3, 4], 10, |t, x| {
        let b = c(t, &bias4);
        t.add_bias(x, b)
    });
    s.op("add_bias.bias", &[4], 11, |t, x| {
        let a = c(t, &b34);
        t.add_bias(a, x)
    });
    s.op("scale", &[3, 4], 12, |t, x| Ok(t.scale(x, -2.5)));
    s.op("sigmoid", &[3, 4], 13, |t, x| Ok(t.sigmoid(x)));
    s.op("tanh", &[3, 4], 14, |t, x| Ok(t.tanh(x)));
    s.op("softplus", &[3, 4], 15, |t, x| Ok(t.softplus(x)));
    s.op("softmax", &[3, 5], 16, |t, x| Ok(t.softmax(x)));
    s.op("reshape", &[3, 4], 17, |t, x| t.reshape(x, &[2, 6]));
    s.op("select_axis1", &[2, 3, 4], 18, |t, x| t.select_axis1(x, 1));
    s.op("stack_axis1", &[2, 4], 19, |t, x| {
        let a = t.tanh(x);
        let b = t.scale(x, 2.0);
        t.stack_axis1(&[x, a, b])
    });
    s.op("concat_last", &[2, 3], 20, |t, x| {
        let a = t.sigmoid(x);
        t.concat_last(&[x, a])
    });
    let m55 = Arc::new(random_tensor(&mut rng, &[5, 5]).data().to_vec());
    s.op("const_left_mul", &[2, 5, 3], 21, |t, x| t.const_left_mul(m55.clone(), x));
    let gamma = random_tensor(&mut rng, &[4]);
    let beta = random_tensor(&mut rng, &[4]);
    let x64 = random_tensor(&mut rng, &[6, 4]);
    let running = (vec![0.1, -0.2, 0.3, 0.0], vec![1.5, 0.5, 2.0, 1.0]);
    for mode in [Mode::Train, Mode::Eval] {
        let bn = |t: &mut Tape, x: Var, g: Var, b: Var| {
            Ok(t.batch_norm(x, g, b, (&running.0, &running.1), mode, 1e-5)?.0)
        };
        s.op(&format!("batch_norm.{mode:?}.input"), &[6, 4], 22, |t, x| {
            let (g, b) = (c(t, &gamma), c(t, &beta));
            bn(t, x, g, b)
        });
        s.op(&format!("batch_norm.{mode:?}.gamma"), &[4], 23, |t, g| {
            let (x, b) = (c(t, &x64), c(t, &beta));
            bn(t, x, g, b)
        });
        s.op(&format!("batch_norm.{mode:?}.beta"), &[4], 24, |t, b| {
            let (x, g) = (c(t, &x64), c(t, &gamma));
            bn(t, x, g, b)
        });
    }
    s.op("dropout", &[4, 5], 25, |t, x| {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        t.dropout(x, 0.4, Mode::Train, &mut r)
    });
    let fake = [false, false, false, true, false, false];
    s.op("pair_max_pool", &[2, 6, 3], 26, |t, x| t.pair_max_pool(x, &fake));
    s.op("sum", &[3, 4], 27, |t, x| Ok(t.sum(x)));
    s.op("mean", &[3, 4], 28, |t, x| Ok(t.mean(x)));
    s.op("sum_squares", &[3, 4], 29, |t, x| Ok(t.sum_squares(x)));
    s.op("softmax_cross_entropy", &[4, 3], 30, |t, x| t.softmax_cross_entropy(x, &[0, 2, 1, 2]));
    let target = one_hot(&[1, 0, 3], 4).unwrap();
    s.op("loss_mse_l2", &[3, 4], 31, |t, x| {
        let p = t.softmax(x);
        t.loss_mse_l2(p, &target, &[x], 0.1)
    });
    s.op("loss_crossentropy_l2", &[3, 4], 32, |t, x| {
        t.loss_crossentropy_l2(x, &[1, 0, 3], &[x], 0.1)
    });

    let a = random_adjacency(&mut rng, 6, 0.7);
    let (l, _) = normalized_laplacian(&a);
    let lap = Arc::new(row_major(&scale_laplacian(&l, dense_lambda_max(&l)).unwrap()));
    let xg = random_tensor(&mut rng, &[2, 6, 2]);
    let th = random_tensor(&mut rng, &[3, 2, 3]);
    s.op("chebyshev_conv.theta", &[3, 2, 3], 33, |t, w| {
        let x = c(t, &xg);
        chebyshev_conv(t, w, &lap, x, 3)
    });
    s.op("chebyshev_conv.signal", &[2, 6, 2], 34, |t, x| {
        let w = c(t, &th);
        chebyshev_conv(t, w, &lap, x, 3)
    });

    // Recurrent blocks, with respect to their parameters and their inputs.
    let mut store = ParamStore::new();
    let cell = LstmCell::init(&mut store, "cell", 3, 4, &mut rng);
    let att = Attention::init(&mut store, "att", 4, 3, &mut rng);
    let bwd = LstmCell::init(&mut store, "bwd", 3, 4, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
    }
    let x3 = random_tensor(&mut rng, &[2, 3]);
    let h4 = random_tensor(&mut rng, &[2, 4]);
    let c4 = random_tensor(&mut rng, &[2, 4]);
    let y = random_tensor(&mut rng, &[2, 5, 4]);
    let seq = random_tensor(&mut rng, &[2, 4, 3]);
    let step = |t: &mut Tape, st: &ParamStore, x: Var, h: Var, cc: Var| -> graphmind::Result<Var> {
        let (h, cc) = lstm_cell_step(t, st, &cell, x, h, cc)?;
        let both = t.concat_last(&[h, cc])?;
        probe(t, both, 35)
    };
    s.record(
        "lstm_cell.params",
        gradient_check_params(
            &store,
            |t, st| {
                let (x, h, cc) = (c(t, &x3), c(t, &h4), c(t, &c4));
                step(t, st, x, h, cc)
            },
            TOL,
            usize::MAX,
        ),
    );
    for (name, which) in [("lstm_cell.input", 0), ("lstm_cell.hidden", 1), ("lstm_cell.cell", 2)] {
        let theta = [&x3, &h4, &c4][which].clone();
        s.record(
            name,
            input_check(&store, &theta, |t, st, v| {
                let mut vars = [c(t, &x3), c(t, &h4), c(t, &c4)];
                vars[which] = v;
                step(t, st, vars[0], vars[1], vars[2])
            }),
        );
    }
    let attend = |t: &mut Tape, st: &ParamStore, yv: Var| -> graphmind::Result<Var> {
        let (alpha, summary) = attention_weights(t, st, &att, yv)?;
        let a = probe(t, alpha, 36)?;
        let b = probe(t, summary, 37)?;
        t.add(a, b)
    };
    s.record(
        "attention.params",
        gradient_check_params(
            &store,
            |t, st| {
                let yv = c(t, &y);
                attend(t, st, yv)
            },
            TOL,
            usize::MAX,
        ),
    );
    s.record("attention.sequence", input_check(&store, &y, |t, st, v| attend(t, st, v)));
    s.record(
        "bilstm.params",
        gradient_check_params(
            &store,
            |t, st| {
                let x = c(t, &seq);
                let out = bilstm_forward(t, st, &cell, &bwd, x)?;
                probe(t, out, 38)
            },
            TOL,
            usize::MAX,
        ),
    );
    s.record(
        "bilstm.sequence",
        input_check(&store, &seq, |t, st, v| {
            let out = bilstm_forward(t, st, &cell, &bwd, v)?;
            probe(t, out, 38)
        }),
    );

    // Full stage-1 model.
    let cfg = Stage1Config {
        channels: 3,
        hidden: 4,
        attention: 3,
        features: 4,
        ..Stage1Config::default()
    };
    let seeds = SeedStream::new(16);
    let model = Stage1Model::new(&cfg, &seeds).map_err(err)?;
    let xs = random_tensor(&mut rng, &[4, 4, 3]);
    let labels = [0, 1, 2, 3];
    s.record(
        "stage1 model",
        gradient_check_params(
            &model.store,
            |t, st| {
                let mut m = model.clone();
                m.store = st.clone();
                let mut r = seeds.rng("gradcheck.dropout");
                let xv = c(t, &xs);
                let out = m.forward(t, xv, Mode::Train, &mut r)?;
                m.loss(t, &out, &labels, 1e-3)
            },
            TOL,
            8,
        ),
    );

    // Full stage-2 model.
    let feats = Tensor::new(vec![6, 8], (0..48).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
    let g = CorrelationGraph::from_features(&feats).map_err(err)?;
    let h = graclus_coarsen(&g.adjacency, 3).map_err(err)?;
    let gcfg = GcnConfig {
        filters: vec![2, 3, 4],
        ..GcnConfig::default()
    };
    let gcn = GcnModel::new(&gcfg, h, &SeedStream::new(6)).map_err(err)?;
    let xg = gcn.prepare(&feats).map_err(err)?;
    let glabels = [0, 1, 2, 3, 1, 0];
    s.record(
        "gcn model",
        gradient_check_params(
            &gcn.store,
            |t, st| {
                let mut m = gcn.clone();
                m.store = st.clone();
                let xv = c(t, &xg);
                let (logits, _) = m.forward(t, xv, Mode::Train)?;
                m.loss(t, logits, &glabels, 1e-3)
            },
            TOL,
            usize::MAX,
        ),
    );

    ensure(s.failures.is_empty(), || s.failures.join("; "))?;
    Ok(format!(
        "{} checks, worst relative error {:.1e} (tolerance {TOL:.0e})",
        s.checks, s.worst
    ))
}

// ---------------------------------------------------------------- 2

fn chebyshev_polynomial(k: usize, x: f64) -> f64 {
    (k as f64 * x.clamp(-1.0, 1.0).acos()).cos()
}

fn criterion_spectral() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.gen_range(2..=8);
        let k = 1 + case % 4;
        let (f_in, f_out, batch) = (2, 3, 2);
        let density = rng.gen_range(0.3..1.0);
        let a = random_adjacency(&mut rng, n, density);
        let (l, _) = normalized_laplacian(&a);
        let scaled = scale_laplacian(&l, dense_lambda_max(&l)).map_err(err)?;
        let theta = random_tensor(&mut rng, &[k, f_in, f_out]);
        let x = random_tensor(&mut rng, &[batch, n, f_in]);

        let mut tape = Tape::new();
        let tv = tape.constant(theta.clone());
        let xv = tape.constant(x.clone());
        let y = chebyshev_conv(&mut tape, tv, &Arc::new(row_major(&scaled)), xv, k).map_err(err)?;
        let got = tape.value(y).data();

        // y[:, o] = Σ_i U g_io(Λ) Uᵀ x[:, i], with g_io(λ) = Σ_k θ[k,i,o] T_k(λ)
        let eig = SymmetricEigen::new(scaled.clone());
        let u = &eig.eigenvectors;
        for b in 0..batch {
            for o in 0..f_out {
                let mut expected = DVector::zeros(n);
                for i in 0..f_in {
                    let xi = DVector::from_iterator(n, (0..n).map(|v| x.data()[(b * n + v) * f_in + i]));
                    let g = DVector::from_iterator(
                        n,
                        eig.eigenvalues.iter().map(|&lam| {
                            (0..k)
                                .map(|kk| theta.data()[(kk * f_in + i) * f_out + o] * chebyshev_polynomial(kk, lam))
                                .sum::<f64>()
                        }),
                    );
                    expected += u * DMatrix::from_diagonal(&g) * u.transpose() * xi;
                }
                for v in 0..n {
                    let e = (got[(b * n + v) * f_out + o] - expected[v]).abs();
                    worst = worst.max(e);
                }
            }
        }
    }
    ensure(worst <= 1e-8, || format!("max deviation {worst:.2e} > 1e-8"))?;
    Ok(format!("50 graphs, N <= 8, K <= 4, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn criterion_laplacian() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut lo, mut hi, mut kernel): (f64, f64, f64) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for case in 0..100 {
        let n = rng.gen_range(2..=16);
        let density = rng.gen_range(0.1..1.0);
        let a = random_adjacency(&mut rng, n, density);
        let (l, d) = normalized_laplacian(&a);
        ensure(l == l.transpose(), || format!("case {case}: not symmetric"))?;
        for i in 0..n {
            ensure(l[(i, i)] == 1.0, || format!("case {case}: diagonal {}", l[(i, i)]))?;
        }
        let eig = SymmetricEigen::new(l.clone()).eigenvalues;
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
        let k = d.map(f64::sqrt);
        kernel = kernel.max((&l * &k).amax());
    }
    ensure(lo >= -1e-9, || format!("eigenvalue {lo:.3e} below 0"))?;
    ensure(hi <= 2.0 + 1e-9, || format!("eigenvalue {hi} above 2"))?;
    ensure(kernel <= 1e-9, || format!("|L D^1/2 1| = {kernel:.2e}"))?;
    Ok(format!(
        "100 graphs, spectrum within [{lo:.1e}, {hi:.6}], kernel residual {kernel:.1e}"
    ))
}

// ---------------------------------------------------------------- 4

/// Greedy normalized-cut matching on the padded graph in native order,
/// composed over `levels`: original members of each coarsest cluster.
fn oracle_clusters(a: &DMatrix<f64>, levels: usize) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let p = n.next_power_of_two();
    let mut w = DMatrix::zeros(p, p);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[(i, j)] = a[(i, j)];
            }
        }
    }
    let mut fake: Vec<bool> = (0..p).map(|i| i >= n).collect();
    let mut members: Vec<Vec<usize>> = (0..p).map(|i| if i < n { vec![i] } else { vec![] }).collect();
    for _ in 0..levels {
        let size = w.nrows();
        let deg: Vec<f64> = (0..size).map(|i| (0..size).filter(|&j| j != i).map(|j| w[(i, j)]).sum()).collect();
        let mut taken = vec![false; size];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut lonely = Vec::new();
        for i in 0..size {
            if taken[i] {
                continue;
            }
            taken[i] = true;
            let mut best = None;
            let mut best_score = f64::NEG_INFINITY;
            for j in 0..size {
                if j != i && !taken[j] && w[(i, j)] > 0.0 {
                    let score = w[(i, j)] / deg[i] + w[(i, j)] / deg[j];
                    if score > best_score {
                        best_score = score;
                        best = Some(j);
                    }
                }
            }
            match best {
                Some(j) => {
                    taken[j] = true;
                    pairs.push((i, j));
                }
                None => lonely.push(i),
            }
        }
        let real: Vec<usize> = lonely.iter().copied().filter(|&i| !fake[i]).collect();
        let pad: Vec<usize> = lonely.iter().copied().filter(|&i| fake[i]).collect();
        let both = real.len().min(pad.len());
        pairs.extend((0..both).map(|k| (real[k], pad[k])));
        let left: Vec<usize> = real[both..].iter().chain(&pad[both..]).copied().collect();
        pairs.extend(left.chunks(2).map(|c| (c[0], c[1])));
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(x, y)| (x.min(y), x.max(y))).collect();
        pairs.sort_unstable();
        let m = pairs.len();
        let mut coarse = DMatrix::zeros(m, m);
        for (pi, &(a1, a2)) in pairs.iter().enumerate() {
            for (qi, &(b1, b2)) in pairs.iter().enumerate() {
                if pi != qi {
                    coarse[(pi, qi)] = w[(a1, b1)] + w[(a1, b2)] + w[(a2, b1)] + w[(a2, b2)];
                }
            }
        }
        members = pairs
            .iter()
            .map(|&(x, y)| members[x].iter().chain(&members[y]).copied().collect())
            .collect();
        fake = pairs.iter().map(|&(x, y)| fake[x] && fake[y]).collect();
        w = coarse;
    }
    members
}

fn criterion_pooling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let density = rng.gen_range(0.15..0.9);
        let a = random_adjacency(&mut rng, 8, density);
        let h = graclus_coarsen(&a, 2).map_err(err)?;
        ensure(h.sizes == [8, 4, 2], || format!("case {case}: sizes {:?}", h.sizes))?;
        let signal: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 8, 1], h.permute_row(&signal).map_err(err)?).unwrap());
        let p1 = tape.pair_max_pool(x, &h.fake[0]).map_err(err)?;
        let p2 = tape.pair_max_pool(p1, &h.fake[1]).map_err(err)?;
        let pooled = tape.value(p2).data().to_vec();

        let mut oracle: Vec<(Vec<usize>, f64)> = oracle_clusters(&a, 2)
            .into_iter()
            .map(|mut m| {
                m.sort_unstable();
                let v = m.iter().map(|&i| signal[i]).fold(f64::NEG_INFINITY, f64::max);
                (m, if v.is_finite() { v } else { 0.0 })
            })
            .collect();
        let mut got: Vec<(Vec<usize>, f64)> = (0..2)
            .map(|j| {
                let mut m: Vec<usize> = h.permutation[4 * j..4 * j + 4].iter().flatten().copied().collect();
                m.sort_unstable();
                (m, pooled[j])
            })
            .collect();
        oracle.sort_by(|x, y| x.0.cmp(&y.0));
        got.sort_by(|x, y| x.0.cmp(&y.0));
        ensure(got == oracle, || format!("case {case}: pooled {got:?}, brute force {oracle:?}"))?;
    }
    // padding contract: sizes follow the next power of two, halving per level
    for n in 2..=40usize {
        let a = random_adjacency(&mut rng, n, 0.5);
        let p = n.next_power_of_two();
        let levels = p.trailing_zeros() as usize;
        let h = graclus_coarsen(&a, levels).map_err(err)?;
        let expected: Vec<usize> = (0..=levels).map(|l| p >> l).collect();
        ensure(h.sizes == expected, || format!("n={n}: sizes {:?}", h.sizes))?;
        ensure(h.fake[0].iter().filter(|&&f| f).count() == p - n, || format!("n={n}: fake count"))?;
    }
    Ok("50 graphs match brute-force cluster max; padding contract holds for N = 2..40".into())
}

// ---------------------------------------------------------------- 5

fn columns(cols: &[Vec<f64>]) -> Tensor {
    let m = cols[0].len();
    let n = cols.len();
    let mut data = vec![0.0; m * n];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            data[i * n + j] = c[i];
        }
    }
    Tensor::new(vec![m, n], data).unwrap()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn criterion_pearson() -> Check {
    let p = pearson_matrix(&columns(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 4.0]])).map_err(err)?;
    let r = p[(0, 1)];
    let hand = 3.0 / (2.0f64 / 3.0).sqrt() / 14f64.sqrt();
    ensure((r - hand).abs() < 1e-12, || format!("r = {r}, closed form {hand}"))?;
    ensure((r - 0.981_981).abs() <= 1e-6, || format!("r = {r}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..10 {
        let m = rng.gen_range(3..80);
        let cols: Vec<Vec<f64>> = (0..64).map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let p = pearson_matrix(&columns(&cols)).map_err(err)?;
        ensure(p == p.transpose(), || format!("case {case}: not symmetric"))?;
        for i in 0..64 {
            ensure((p[(i, i)] - 1.0).abs() < 1e-12, || format!("case {case}: diagonal {}", p[(i, i)]))?;
            for j in 0..64 {
                ensure(p[(i, j)].abs() <= 1.0 + 1e-12, || format!("case {case}: |r| > 1"))?;
            }
        }
        for (i, j) in [(0, 1), (5, 40), (63, 2), (17, 18)] {
            worst = worst.max((p[(i, j)] - pearson_oracle(&cols[i], &cols[j])).abs());
        }
    }
    ensure(worst < 1e-12, || format!("oracle deviation {worst:.2e}"))?;
    Ok(format!("r = {r:.9}; 10 random 64-column matrices symmetric, unit diagonal, |r| <= 1"))
}

// ---------------------------------------------------------------- data

/// Data root holding subject 1: `$GRAPHMIND_EEGMMIDB` or a synthetic copy.
fn subject_root(scratch: &Path) -> Result<(PathBuf, &'static str), String> {
    if let Some(root) = std::env::var_os("GRAPHMIND_EEGMMIDB") {
        return Ok((PathBuf::from(root), "EEGMMIDB"));
    }
    let root = scratch.join("synthetic");
    if !root.exists() {
        write_synthetic_dataset(&root, &[1], 1, &SynthConfig::default()).map_err(err)?;
    }
    Ok((root, "synthetic"))
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// ---------------------------------------------------------------- 6

fn criterion_capacity(root: &Path) -> Check {
    let segments = ingest(root, &[1], false).map_err(err)?.segments;
    // 16 segments of each task, from different trials
    let mut picked: Vec<&Segment> = Vec::new();
    for task in 0..4 {
        picked.extend(segments.iter().filter(|s| s.label() == task && s.index == 3).take(16));
    }
    ensure(picked.len() == 64, || format!("only {} segments", picked.len()))?;
    let x = segments_to_tensor(&picked).map_err(err)?;
    let y: Vec<usize> = picked.iter().map(|s| s.label()).collect();
    let accuracy = |pred: &[usize]| pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;

    let cfg = Stage1Config {
        hidden: 32,
        batch_size: 16,
        learning_rate: 1e-3,
        epochs: 200,
        ..Stage1Config::default()
    };
    let seeds = SeedStream::new(6);
    let mut rnn = Stage1Model::new(&cfg, &seeds).map_err(err)?;
    let h1 = stage1_train(&mut rnn, &x, &y, &cfg, &seeds).map_err(err)?;
    let (features, logits) = rnn.infer(&x).map_err(err)?;
    let acc1 = accuracy(&graphmind::train::argmax_rows(logits.data(), 4));
    let first1 = h1.accuracy.iter().position(|&a| a >= 0.99).map_or(0, |e| e + 1);

    let gcfg = GcnConfig {
        filters: vec![16, 32, 64],
        learning_rate: 1e-3,
        epochs: 200,
        optimizer: OptimizerKind::Adam,
        ..GcnConfig::default()
    };
    let graph = CorrelationGraph::from_features(&features).map_err(err)?;
    let h = graclus_coarsen(&graph.adjacency, 3).map_err(err)?;
    let mut gcn = GcnModel::new(&gcfg, h, &seeds).map_err(err)?;
    let h2 = gcn_train(&mut gcn, &features, &y, &gcfg, &seeds).map_err(err)?;
    let acc2 = accuracy(&gcn.predict(&features).map_err(err)?.labels);
    let first2 = h2.accuracy.iter().position(|&a| a >= 0.99).map_or(0, |e| e + 1);

    let detail = format!(
        "stage 1 training accuracy {acc1:.3} (first >= 0.99 at epoch {first1}), stage 2 {acc2:.3} (epoch {first2})"
    );
    ensure(acc1 >= 0.99 && acc2 >= 0.99, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7, 10

fn desk_config(output: &Path) -> RunConfig {
    RunConfig {
        seed: 1,
        folds: 10,
        split: SplitMode::Segment,
        graph: GraphSource::Train,
        output: output.to_path_buf(),
        rnn: Stage1Config {
            hidden: 32,
            attention: 8,
            features: 64,
            dropout: 0.25,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 30,
            ..Stage1Config::default()
        },
        gcn: GcnConfig {
            filters: vec![16, 32, 64],
            order: 2,
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 40,
            ..GcnConfig::default()
        },
        ..RunConfig::default()
    }
}

const REPORT_FILES: [&str; 4] = ["report.txt", "confusion.csv", "roc.csv", "metrics.csv"];

fn desk_run(root: &Path, out: &Path) -> Result<EvalReport, String> {
    let segments = ingest(root, &[1], false).map_err(err)?.segments;
    ensure(segments.len() == 840, || format!("{} segments", segments.len()))?;
    let config = desk_config(out);
    let plan = plan_folds(&segments, &config).map_err(err)?;
    let outcome = run_fold(&segments, &plan, 1, &config, out, &mut |_| {}).map_err(err)?;
    Ok(outcome.report)
}

fn criterion_desk(root: &Path, source: &str, out: &Path) -> Check {
    let report = desk_run(root, out)?;
    for f in REPORT_FILES {
        ensure(out.join(f).is_file(), || format!("{f} missing"))?;
    }
    let text = std::fs::read_to_string(out.join("report.txt")).map_err(err)?;
    for key in ["gaa: ", "kappa: ", "macro_precision: ", "macro_recall: ", "macro_f1: ", "auc: ", "confusion.L: "] {
        ensure(text.contains(key), || format!("report lacks {key:?}"))?;
    }
    let roc = std::fs::read_to_string(out.join("roc.csv")).map_err(err)?;
    ensure(roc.starts_with("fpr,tpr,threshold\n"), || "roc.csv header".into())?;
    let m = &report.metrics;
    let detail = format!(
        "{source} subject 1, test gaa {:.3} kappa {:.3} macro F1 {:.3} auc {:.3} on {} segments",
        m.gaa,
        m.kappa,
        m.macro_f1,
        report.auc,
        report.samples()
    );
    ensure(m.gaa >= 0.60, || detail.clone())?;
    Ok(detail)
}

fn criterion_determinism(root: &Path, first: &Path, second: &Path) -> Check {
    ensure(first.join("report.txt").is_file(), || "criterion 7 produced no report".into())?;
    desk_run(root, second)?;
    for f in REPORT_FILES {
        let a = std::fs::read(first.join(f)).map_err(err)?;
        let b = std::fs::read(second.join(f)).map_err(err)?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok("report.txt, confusion.csv, roc.csv and metrics.csv identical across two runs".into())
}

// ---------------------------------------------------------------- 8

fn criterion_protocol(root: &Path, source: &str) -> Check {
    let first = ingest(root, &[1], false).map_err(err)?;
    ensure(first.segments.len() == 840, || format!("{} segments", first.segments.len()))?;
    ensure(first.segments.iter().all(|s| s.data.len() == 64 * 64), || "segment not 64x64".into())?;
    let mut per_task = [0; 4];
    first.segments.iter().for_each(|s| per_task[s.label()] += 1);
    ensure(per_task == [210; 4], || format!("per task {per_task:?}"))?;
    let a = cache_to_bytes(&first.segments).map_err(err)?;
    let b = cache_to_bytes(&ingest(root, &[1], false).map_err(err)?.segments).map_err(err)?;
    ensure(a == b, || "cache bytes differ between runs".into())?;
    Ok(format!("{source}: 840 segments of 64x64 (210 per task), cache of {} bytes identical across runs", a.len()))
}

// ---------------------------------------------------------------- 9

fn criterion_metrics() -> Check {
    let truth: Vec<usize> = [vec![0; 50], vec![1; 50]].concat();
    let pred: Vec<usize> = [vec![0; 40], vec![1; 10], vec![0; 5], vec![1; 45]].concat();
    let m = classification_metrics(&confusion_matrix(&truth, &pred, 4).map_err(err)?).map_err(err)?;
    // p_o = 0.85, p_e = (50·45 + 50·55)/100² = 0.5
    ensure((m.gaa - 0.85).abs() < 1e-15, || format!("gaa {}", m.gaa))?;
    ensure((m.kappa - 0.7).abs() < 1e-12, || format!("kappa {}", m.kappa))?;
    ensure((m.per_class[0].precision - 40.0 / 45.0).abs() < 1e-15, || "precision".into())?;
    let f1 = 2.0 * (40.0 / 45.0) * 0.8 / (40.0 / 45.0 + 0.8);
    ensure((m.per_class[0].f1 - f1).abs() < 1e-15, || format!("f1 {}", m.per_class[0].f1))?;

    let chance = confusion_matrix(
        &[vec![0; 50], vec![1; 50]].concat(),
        &[vec![0; 25], vec![1; 25], vec![0; 25], vec![1; 25]].concat(),
        4,
    )
    .map_err(err)?;
    ensure(classification_metrics(&chance).map_err(err)?.kappa.abs() < 1e-15, || "chance kappa".into())?;
    let perfect = classification_metrics(&confusion_matrix(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).map_err(err)?)
        .map_err(err)?;
    ensure(perfect.gaa == 1.0 && perfect.kappa == 1.0 && perfect.macro_f1 == 1.0, || "perfect".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(8..200);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let scores: Vec<f64> = (0..4 * n).map(|_| (rng.gen_range(0..20) as f64 + 1.0) / 21.0).collect();
        let base = roc_auc(&truth, &Tensor::new(vec![n, 4], scores.clone()).unwrap()).map_err(err)?.1;
        for f in [|v: f64| v.ln(), |v: f64| 5.0 * v - 3.0, |v: f64| v.powi(3), |v: f64| v.exp().exp()] {
            let mapped: Vec<f64> = scores.iter().map(|&v| f(v)).collect();
            let auc = roc_auc(&truth, &Tensor::new(vec![n, 4], mapped).unwrap()).map_err(err)?.1;
            worst = worst.max((auc - base).abs());
        }
    }
    ensure(worst < 1e-12, || format!("AUC moved by {worst:.2e} under a monotone map"))?;
    Ok(format!("fixtures exact; AUC invariant under 4 monotone maps on 100 score sets (max change {worst:.0e})"))
}

fn main() -> ExitCode {
    let dir = scratch();
    let data = dir.path().join("data");
    let mut all = true;
    all &= run(1, "gradient integrity", Some(Duration::from_secs(60)), criterion_gradients);
    all &= run(2, "spectral oracle", Some(Duration::from_secs(10)), criterion_spectral);
    all &= run(3, "laplacian properties", Some(Duration::from_secs(10)), criterion_laplacian);
    all &= run(4, "coarsening and pooling oracle", Some(Duration::from_secs(10)), criterion_pooling);
    all &= run(5, "pearson fixture", Some(Duration::from_secs(5)), criterion_pearson);
    let root = match subject_root(&data) {
        Ok(r) => Some(r),
        Err(e) => {
            println!("data unavailable: {e}");
            None
        }
    };
    let with_root = |f: &dyn Fn(&Path, &str) -> Check| -> Check {
        match &root {
            Some((r, source)) => f(r, source),
            None => Err("no data".into()),
        }
    };
    all &= run(6, "capacity sanity", Some(Duration::from_secs(600)), || {
        with_root(&|r, _| criterion_capacity(r))
    });
    let first = dir.path().join("desk1");
    let second = dir.path().join("desk2");
    all &= run(7, "end-to-end desk scale", Some(Duration::from_secs(2700)), || {
        with_root(&|r, s| criterion_desk(r, s, &first))
    });
    all &= run(8, "protocol arithmetic", None, || with_root(&criterion_protocol));
    all &= run(9, "metrics identities", Some(Duration::from_secs(5)), criterion_metrics);
    all &= run(10, "determinism", None, || {
        with_root(&|r, _| criterion_determinism(r, &first, &second))
    });
    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
