fn main() {
    let n = 200;
    let window = 40e-6;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * window / (n - 1) as f64).collect();
    let values: Vec<f64> = times.iter().map(|&t| 1.0 * (-t / 1e-6f64).exp() + 0.5 * (-t / 10e-6f64).exp()).collect();
    let fit = qthermo::fitting::fit_double_exponential_series(&times, &values).unwrap();
    println!("{fit:?}");
}
