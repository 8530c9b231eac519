fn main() {
    let n = 2000;
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| if i == j { 4.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 });
    let t = std::time::Instant::now();
    let e = a.self_adjoint_eigen(faer::Side::Lower).unwrap();
    println!("faer {:?} {}", t.elapsed(), e.S().column_vector()[0]);
    let b = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| if i == j { 4.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 });
    let t = std::time::Instant::now();
    let e = nalgebra::SymmetricEigen::new(b);
    println!("nalgebra {:?} {}", t.elapsed(), e.eigenvalues.min());
}
