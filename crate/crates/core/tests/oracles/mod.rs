//! Deliberately naive reimplementations of the image measures, written
//! from the textbook definitions with plain loops over `Vec`s.

#![allow(dead_code)]

pub type Plane = Vec<Vec<f64>>;

/// (3, H, W) image as nested vectors, byte range.
pub type Rgb = Vec<Plane>;

pub fn from_array(a: &ndarray::Array3<f64>) -> Rgb {
    let (c, h, w) = a.dim();
    (0..c)
        .map(|k| (0..h).map(|i| (0..w).map(|j| a[[k, i, j]]).collect()).collect())
        .collect()
}

pub fn psnr(a: &Rgb, b: &Rgb) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for c in 0..a.len() {
        for i in 0..a[c].len() {
            for j in 0..a[c][i].len() {
                let d = a[c][i][j] - b[c][i][j];
                se += d * d;
                n += 1.0;
            }
        }
    }
    let mse = se / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

fn gray(a: &Rgb) -> Plane {
    let (h, w) = (a[0].len(), a[0][0].len());
    let mut g = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            g[i][j] = 0.299 * a[0][i][j] + 0.587 * a[1][i][j] + 0.114 * a[2][i][j];
        }
    }
    g
}

/// 11×11 Gaussian window, sigma 1.5, built directly in 2-D.
fn window() -> Plane {
    let mut w = vec![vec![0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Mean SSIM and mean contrast-structure term over every window position
/// lying fully inside the image.
pub fn ssim_gray(x: &Plane, y: &Plane) -> (f64, f64) {
    let win = window();
    let (h, w) = (x.len(), x[0].len());
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (mut s_sum, mut cs_sum, mut count) = (0.0, 0.0, 0.0);
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    mx += win[a][b] * x[top + a][left + b];
                    my += win[a][b] * y[top + a][left + b];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    let dx = x[top + a][left + b] - mx;
                    let dy = y[top + a][left + b] - my;
                    vx += win[a][b] * dx * dx;
                    vy += win[a][b] * dy * dy;
                    cxy += win[a][b] * dx * dy;
                }
            }
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let cs = (2.0 * cxy + c2) / (vx + vy + c2);
            s_sum += l * cs;
            cs_sum += cs;
            count += 1.0;
        }
    }
    (s_sum / count, cs_sum / count)
}

pub fn ssim(a: &Rgb, b: &Rgb) -> f64 {
    ssim_gray(&gray(a), &gray(b)).0
}

fn halve(x: &Plane) -> Plane {
    let (h, w) = (x.len() / 2, x[0].len() / 2);
    let mut out = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            out[i][j] = 0.25 * (x[2 * i][2 * j] + x[2 * i + 1][2 * j] + x[2 * i][2 * j + 1] + x[2 * i + 1][2 * j + 1]);
        }
    }
    out
}

pub fn ms_ssim(a: &Rgb, b: &Rgb) -> f64 {
    let all = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (mut x, mut y) = (gray(a), gray(b));
    let min_dim = x.len().min(x[0].len());
    let mut scales = 5;
    while scales > 1 && min_dim / (1 << (scales - 1)) < 11 {
        scales -= 1;
    }
    let norm: f64 = all[..scales].iter().sum();
    let mut result = 1.0;
    for (s, weight) in all[..scales].iter().enumerate() {
        let (full, cs) = ssim_gray(&x, &y);
        let value = if s + 1 == scales { full } else { cs };
        result *= value.max(0.0).powf(weight / norm);
        x = halve(&x);
        y = halve(&y);
    }
    result
}

/// Full 2-D convolution followed by the centred crop of `mode="same"`.
fn conv_same(x: &Plane, k: &Plane) -> Plane {
    let (h, w) = (x.len(), x[0].len());
    let (kh, kw) = (k.len(), k[0].len());
    let (fh, fw) = (h + kh - 1, w + kw - 1);
    let mut full = vec![vec![0.0; fw]; fh];
    for i in 0..h {
        for j in 0..w {
            for a in 0..kh {
                for b in 0..kw {
                    full[i + a][j + b] += x[i][j] * k[a][b];
                }
            }
        }
    }
    let (sy, sx) = ((fh - h) / 2, (fw - w) / 2);
    (0..h).map(|i| full[sy + i][sx..sx + w].to_vec()).collect()
}

fn every_other(x: &Plane) -> Plane {
    x.iter()
        .step_by(2)
        .map(|r| r.iter().step_by(2).copied().collect())
        .collect()
}

fn mix(a: &Rgb, w: [f64; 3]) -> Plane {
    let (h, wd) = (a[0].len(), a[0][0].len());
    (0..h)
        .map(|i| {
            (0..wd)
                .map(|j| w[0] * a[0][i][j] + w[1] * a[1][i][j] + w[2] * a[2][i][j])
                .collect()
        })
        .collect()
}

pub fn haarpsi(a: &Rgb, b: &Rgb) -> f64 {
    let (c, alpha) = (30.0, 4.2);
    let box2 = vec![vec![0.25; 2]; 2];
    let prep = |img: &Rgb, w: [f64; 3]| every_other(&conv_same(&mix(img, w), &box2));
    let ya = prep(a, [0.299, 0.587, 0.114]);
    let yb = prep(b, [0.299, 0.587, 0.114]);
    let ia = prep(a, [0.596, -0.274, -0.322]);
    let ib = prep(b, [0.596, -0.274, -0.322]);
    let qa = prep(a, [0.211, -0.523, 0.312]);
    let qb = prep(b, [0.211, -0.523, 0.312]);

    let haar = |scale: u32, transpose: bool| -> Plane {
        let n = 1usize << scale;
        let v = 1.0 / n as f64;
        let mut f = vec![vec![0.0; n]; n];
        for (r, row) in f.iter_mut().enumerate() {
            for (cc, e) in row.iter_mut().enumerate() {
                let top = if transpose { cc < n / 2 } else { r < n / 2 };
                *e = if top { -v } else { v };
            }
        }
        f
    };
    let coeffs = |img: &Plane| -> Vec<Plane> {
        let mut out = Vec::new();
        for t in [false, true] {
            for s in 1..=3 {
                out.push(conv_same(img, &haar(s, t)));
            }
        }
        out
    };
    let (ca, cb) = (coeffs(&ya), coeffs(&yb));
    let abs_box = |p: &Plane| -> Plane {
        conv_same(p, &box2)
            .into_iter()
            .map(|r| r.into_iter().map(f64::abs).collect())
            .collect()
    };
    let (ia, ib, qa, qb) = (abs_box(&ia), abs_box(&ib), abs_box(&qa), abs_box(&qb));
    let sim = |x: f64, y: f64| (2.0 * x * y + c) / (x * x + y * y + c);
    let sig = |v: f64| 1.0 / (1.0 + (-alpha * v).exp());

    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ya.len() {
        for j in 0..ya[0].len() {
            let mut local = Vec::new();
            let mut weight = Vec::new();
            for o in 0..2 {
                let w = ca[o * 3 + 2][i][j].abs().max(cb[o * 3 + 2][i][j].abs());
                let s1 = sim(ca[o * 3][i][j].abs(), cb[o * 3][i][j].abs());
                let s2 = sim(ca[o * 3 + 1][i][j].abs(), cb[o * 3 + 1][i][j].abs());
                local.push((s1 + s2) / 2.0);
                weight.push(w);
            }
            local.push((sim(ia[i][j], ib[i][j]) + sim(qa[i][j], qb[i][j])) / 2.0);
            weight.push((weight[0] + weight[1]) / 2.0);
            for k in 0..3 {
                num += sig(local[k]) * weight[k];
                den += weight[k];
            }
        }
    }
    let m = num / den;
    let logit = (m / (1.0 - m)).ln() / alpha;
    logit * logit
}
