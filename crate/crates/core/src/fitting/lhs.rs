use rand::seq::SliceRandom;
use rand::Rng;

/// `n` Latin-hypercube points in `[0, 1)^dim`: every coordinate visits each
/// of the `n` equal strata exactly once.
pub fn latin_hypercube<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            point[d] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}
