//! One entry per differentiable operation: runs a finite-difference check at
//! a given seed and reports the max relative error.

use rafd_core::geometry::{align_to_current, grid_coords, transform_points, GridSpec, Pose2};
use rafd_core::net::model::{cost_volume, flow_from_cost, flow_guided_refs};
use rafd_core::rng::Rng;
use rafd_core::tensor::{grad_check, Array, BnMode, Graph, Var};

use super::random_array;

type Check = (&'static str, fn(u64) -> f64);

fn run<F>(seed_tag: u64, inputs: &[Array], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> rafd_core::Result<Var>,
{
    let _ = seed_tag;
    grad_check(f, inputs).expect("grad check ran").max_rel_err
}

fn sq_sum(g: &mut Graph, v: Var) -> rafd_core::Result<Var> {
    let sq = g.mul(v, v)?;
    Ok(g.sum_all(sq))
}

/// Every differentiable op of the engine, checked at one seed each call.
pub fn all_op_checks() -> Vec<Check> {
    vec![
        ("add", |s| {
            let mut r = Rng::new(s);
            let a = random_array(&mut r, &[3, 5], -2.0, 2.0);
            let b = random_array(&mut r, &[3, 5], -2.0, 2.0);
            run(s, &[a, b], |g, v| {
                let x = g.add(v[0], v[1])?;
                sq_sum(g, x)
            })
        }),
        ("sub", |s| {
            let mut r = Rng::new(s ^ 1);
            let a = random_array(&mut r, &[3, 5], -2.0, 2.0);
            let b = random_array(&mut r, &[3, 5], -2.0, 2.0);
            run(s, &[a, b], |g, v| {
                let x = g.sub(v[0], v[1])?;
                sq_sum(g, x)
            })
        }),
        ("mul", |s| {
            let mut r = Rng::new(s ^ 2);
            let a = random_array(&mut r, &[3, 5], -2.0, 2.0);
            let b = random_array(&mut r, &[3, 5], -2.0, 2.0);
            run(s, &[a, b], |g, v| {
                let x = g.mul(v[0], v[1])?;
                sq_sum(g, x)
            })
        }),
        ("div", |s| {
            let mut r = Rng::new(s ^ 3);
            let a = random_array(&mut r, &[3, 5], -2.0, 2.0);
            let b = random_array(&mut r, &[3, 5], 0.5, 2.5);
            run(s, &[a, b], |g, v| {
                let x = g.div(v[0], v[1])?;
                sq_sum(g, x)
            })
        }),
        ("add_mul_scalar", |s| {
            let mut r = Rng::new(s ^ 4);
            let a = random_array(&mut r, &[4, 4], -2.0, 2.0);
            run(s, &[a], |g, v| {
                let x = g.mul_scalar(v[0], -1.7);
                let x = g.add_scalar(x, 0.3);
                sq_sum(g, x)
            })
        }),
        ("relu", |s| {
            let mut r = Rng::new(s ^ 5);
            let mut a = random_array(&mut r, &[4, 4], -2.0, 2.0);
            for x in a.data_mut() {
                if x.abs() < 1e-3 {
                    *x += 0.01;
                }
            }
            run(s, &[a], |g, v| {
                let y = g.relu(v[0]);
                sq_sum(g, y)
            })
        }),
        ("sigmoid", |s| {
            let mut r = Rng::new(s ^ 6);
            let a = random_array(&mut r, &[4, 4], -2.0, 2.0);
            run(s, &[a], |g, v| {
                let y = g.sigmoid(v[0]);
                sq_sum(g, y)
            })
        }),
        ("tanh", |s| {
            let mut r = Rng::new(s ^ 7);
            let a = random_array(&mut r, &[4, 4], -2.0, 2.0);
            run(s, &[a], |g, v| {
                let y = g.tanh(v[0]);
                sq_sum(g, y)
            })
        }),
        ("exp", |s| {
            let mut r = Rng::new(s ^ 8);
            let a = random_array(&mut r, &[4, 4], -1.5, 1.5);
            run(s, &[a], |g, v| {
                let y = g.exp(v[0]);
                sq_sum(g, y)
            })
        }),
        ("ln", |s| {
            let mut r = Rng::new(s ^ 9);
            let a = random_array(&mut r, &[4, 4], 0.2, 3.0);
            run(s, &[a], |g, v| {
                let y = g.ln(v[0]);
                sq_sum(g, y)
            })
        }),
        ("sqrt", |s| {
            let mut r = Rng::new(s ^ 10);
            let a = random_array(&mut r, &[4, 4], 0.2, 3.0);
            run(s, &[a], |g, v| {
                let y = g.sqrt(v[0]);
                sq_sum(g, y)
            })
        }),
        ("clamp", |s| {
            let mut r = Rng::new(s ^ 11);
            let a = random_array(&mut r, &[4, 4], -2.0, 2.0);
            run(s, &[a], |g, v| {
                let y = g.clamp(v[0], -10.0, 10.0);
                sq_sum(g, y)
            })
        }),
        ("reshape", |s| {
            let mut r = Rng::new(s ^ 12);
            let a = random_array(&mut r, &[3, 4], -1.0, 1.0);
            run(s, &[a], |g, v| {
                let y = g.reshape(v[0], &[2, 6])?;
                sq_sum(g, y)
            })
        }),
        ("gather", |s| {
            let mut r = Rng::new(s ^ 13);
            let a = random_array(&mut r, &[3, 4], -1.0, 1.0);
            run(s, &[a], |g, v| {
                let map = std::sync::Arc::new(vec![0usize, 5, 5, 11, 3, 0]);
                let y = g.gather(v[0], map, &[6])?;
                sq_sum(g, y)
            })
        }),
        ("slice_concat_rows", |s| {
            let mut r = Rng::new(s ^ 14);
            let a = random_array(&mut r, &[3, 4], -1.0, 1.0);
            run(s, &[a], |g, v| {
                let top = g.slice_rows(v[0], 0, 2)?;
                let bottom = g.slice_rows(v[0], 1, 2)?;
                let cat = g.concat_rows(&[top, bottom])?;
                sq_sum(g, cat)
            })
        }),
        ("matmul", |s| {
            let mut r = Rng::new(s ^ 15);
            let a = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let b = random_array(&mut r, &[4, 2], -1.0, 1.0);
            run(s, &[a, b], |g, v| {
                let m = g.matmul(v[0], v[1])?;
                sq_sum(g, m)
            })
        }),
        ("matmul_nt", |s| {
            let mut r = Rng::new(s ^ 16);
            let a = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let b = random_array(&mut r, &[2, 4], -1.0, 1.0);
            run(s, &[a, b], |g, v| {
                let m = g.matmul_nt(v[0], v[1])?;
                sq_sum(g, m)
            })
        }),
        ("linear", |s| {
            let mut r = Rng::new(s ^ 17);
            let x = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let w = random_array(&mut r, &[5, 4], -1.0, 1.0);
            let b = random_array(&mut r, &[5], -0.5, 0.5);
            run(s, &[x, w, b], |g, v| {
                let m = g.linear(v[0], v[1], v[2])?;
                sq_sum(g, m)
            })
        }),
        ("layer_scale_add", |s| {
            let mut r = Rng::new(s ^ 18);
            let a = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let b = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let sc = random_array(&mut r, &[4], 0.5, 1.5);
            run(s, &[a, b, sc], |g, v| {
                let y = g.layer_scale_add(v[0], v[1], v[2])?;
                sq_sum(g, y)
            })
        }),
        ("sum_mean_all", |s| {
            let mut r = Rng::new(s ^ 19);
            let a = random_array(&mut r, &[4, 3], -2.0, 2.0);
            run(s, &[a], |g, v| {
                let su = g.sum_all(v[0]);
                let me = g.mean_all(v[0]);
                let prod = g.mul(su, me)?;
                Ok(g.sum_all(prod))
            })
        }),
        ("l1_loss", |s| {
            let mut r = Rng::new(s ^ 20);
            let a = random_array(&mut r, &[4, 3], -2.0, 2.0);
            let b = a.map(|x| x + 0.3);
            run(s, &[a, b], |g, v| g.l1_loss(v[0], v[1]))
        }),
        ("batchnorm_train", |s| {
            let mut r = Rng::new(s ^ 21);
            let x = random_array(&mut r, &[2, 3, 3], -2.0, 2.0);
            let ga = random_array(&mut r, &[2], 0.5, 1.5);
            let be = random_array(&mut r, &[2], -0.5, 0.5);
            run(s, &[x, ga, be], |g, v| {
                let bn = g.batchnorm2d(v[0], v[1], v[2], 1e-5, BnMode::Train)?;
                sq_sum(g, bn.out)
            })
        }),
        ("batchnorm_eval", |s| {
            let mut r = Rng::new(s ^ 22);
            let x = random_array(&mut r, &[2, 3, 3], -2.0, 2.0);
            let ga = random_array(&mut r, &[2], 0.5, 1.5);
            let be = random_array(&mut r, &[2], -0.5, 0.5);
            let rm = random_array(&mut r, &[2], -0.5, 0.5);
            let rv = random_array(&mut r, &[2], 0.5, 1.5);
            run(s, &[x, ga, be], move |g, v| {
                let bn = g.batchnorm2d(
                    v[0],
                    v[1],
                    v[2],
                    1e-5,
                    BnMode::Eval {
                        running_mean: &rm,
                        running_var: &rv,
                    },
                )?;
                sq_sum(g, bn.out)
            })
        }),
        ("layer_norm", |s| {
            let mut r = Rng::new(s ^ 23);
            let x = random_array(&mut r, &[5, 4], -2.0, 2.0);
            let ga = random_array(&mut r, &[4], 0.5, 1.5);
            let be = random_array(&mut r, &[4], -0.5, 0.5);
            run(s, &[x, ga, be], |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                sq_sum(g, y)
            })
        }),
        ("softmax_trailing", |s| {
            let mut r = Rng::new(s ^ 24);
            let x = random_array(&mut r, &[2, 2, 3, 2], -3.0, 3.0);
            run(s, &[x], |g, v| {
                let y = g.softmax(v[0], &[2, 3])?;
                sq_sum(g, y)
            })
        }),
        ("softmax_permuted", |s| {
            let mut r = Rng::new(s ^ 25);
            let x = random_array(&mut r, &[2, 2, 3, 2], -3.0, 3.0);
            run(s, &[x], |g, v| {
                let y = g.softmax(v[0], &[1])?;
                sq_sum(g, y)
            })
        }),
        ("attention", |s| {
            let mut r = Rng::new(s ^ 26);
            let q = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let k = random_array(&mut r, &[5, 4], -1.0, 1.0);
            let vv = random_array(&mut r, &[5, 2], -1.0, 1.0);
            run(s, &[q, k, vv], |g, v| {
                let o = g.scaled_dot_attention(v[0], v[1], v[2], None)?;
                sq_sum(g, o)
            })
        }),
        ("attention_masked", |s| {
            let mut r = Rng::new(s ^ 27);
            let q = random_array(&mut r, &[3, 4], -1.0, 1.0);
            let k = random_array(&mut r, &[5, 4], -1.0, 1.0);
            let vv = random_array(&mut r, &[5, 2], -1.0, 1.0);
            let m = random_array(&mut r, &[3, 5], -0.5, 0.5);
            run(s, &[q, k, vv, m], |g, v| {
                let o = g.scaled_dot_attention(v[0], v[1], v[2], Some(v[3]))?;
                sq_sum(g, o)
            })
        }),
        ("conv2d", |s| {
            let mut r = Rng::new(s ^ 28);
            let x = random_array(&mut r, &[2, 6, 6], -1.0, 1.0);
            let w = random_array(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
            let b = random_array(&mut r, &[3], -0.2, 0.2);
            let mut worst = 0.0f64;
            for (stride, padding) in [(1usize, 0usize), (1, 1), (2, 1)] {
                let err = run(s, &[x.clone(), w.clone(), b.clone()], |g, v| {
                    let c = g.conv2d(v[0], v[1], v[2], stride, padding)?;
                    sq_sum(g, c)
                });
                worst = worst.max(err);
            }
            worst
        }),
        ("grid_sample", |s| {
            let mut r = Rng::new(s ^ 29);
            let input = random_array(&mut r, &[2, 5, 5], -1.0, 1.0);
            let mut pts = Vec::new();
            for _ in 0..5 {
                pts.push(r.range(0.3, 3.7));
            }
            pts.push(-3.0);
            for _ in 0..5 {
                pts.push(r.range(0.3, 3.7));
            }
            pts.push(-4.0);
            let points = Array::from_vec(&[2, 6], pts).unwrap();
            let fill = random_array(&mut r, &[2, 6], -1.0, 1.0);
            run(s, &[input, points, fill], |g, v| {
                let y = g.grid_sample_bilinear(v[0], v[1], v[2])?;
                sq_sum(g, y)
            })
        }),
        ("transform_points", |s| {
            let mut r = Rng::new(s ^ 30);
            let spec = GridSpec::new(4, 4, 1).unwrap();
            let pose = Pose2::new(r.range(-1.0, 1.0), r.range(-1.0, 1.0), r.range(-0.5, 0.5));
            let pts = random_array(&mut r, &[2, 7], 0.0, 3.0);
            run(s, &[pts], move |g, v| {
                let t = transform_points(g, v[0], &pose, &spec)?;
                sq_sum(g, t)
            })
        }),
        ("align_to_current", |s| {
            let mut r = Rng::new(s ^ 31);
            let spec = GridSpec::new(4, 4, 1).unwrap();
            let prev = random_array(&mut r, &[2, 4, 4], -1.0, 1.0);
            let curr = random_array(&mut r, &[2, 4, 4], -1.0, 1.0);
            run(s, &[prev, curr], move |g, v| {
                let a = align_to_current(g, v[0], &Pose2::new(0.37, -0.41, 0.13), v[1], &spec)?;
                sq_sum(g, a)
            })
        }),
        ("cost_volume_and_flow", |s| {
            let mut r = Rng::new(s ^ 32);
            let spec = GridSpec::new(4, 4, 1).unwrap();
            let grid = grid_coords(&spec);
            let a = random_array(&mut r, &[2, 4, 4], -1.0, 1.0);
            let b = random_array(&mut r, &[2, 4, 4], -1.0, 1.0);
            run(s, &[a, b], move |g, v| {
                let c = cost_volume(g, v[0], v[1])?;
                let flow = flow_from_cost(g, c, &grid)?;
                sq_sum(g, flow)
            })
        }),
        ("flow_guided_refs", |s| {
            let mut r = Rng::new(s ^ 33);
            let spec = GridSpec::new(4, 4, 1).unwrap();
            let grid_2m = grid_coords(&spec).reshaped(&[2, 16]).unwrap();
            let flow = random_array(&mut r, &[2, 4, 4], -1.5, 1.5);
            run(s, &[flow], move |g, v| {
                let refs = flow_guided_refs(g, v[0], &grid_2m)?;
                sq_sum(g, refs)
            })
        }),
    ]
}
