use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};
use crate::tensor::Tensor;
use crate::Rng;

/// Draws exactly `s` points.
///
/// With `|P| >= s` this is a uniform sample without replacement. Otherwise
/// every point is taken `⌊s/|P|⌋` times, the remainder is drawn without
/// replacement and the result is shuffled. Returns the selected cloud and,
/// for each of its rows, the source index in `cloud`.
pub fn fixed_size_select(cloud: &PointCloud, s: usize, rng: &mut Rng) -> Result<(PointCloud, Vec<usize>)> {
    if s == 0 {
        return Err(Error::Parameter("selection size must be >= 1".into()));
    }
    let n = cloud.len();
    let map = if n >= s {
        index::sample(rng, n, s).into_vec()
    } else {
        let mut m: Vec<usize> = (0..s / n).flat_map(|_| 0..n).collect();
        m.extend(index::sample(rng, n, s % n));
        m.shuffle(rng);
        m
    };
    Ok((cloud.select(&map)?, map))
}

/// Indices of the points whose horizontal coordinates (first two axes) lie
/// in the axis-aligned square of side `width` centered on `center`.
pub fn column_indices(scene: &PointCloud, center: [f64; 2], width: f64) -> Result<Vec<usize>> {
    if !(width > 0.0) {
        return Err(Error::Parameter(format!("column width must be positive, got {width}")));
    }
    let half = width / 2.0;
    Ok((0..scene.len())
        .filter(|&i| {
            let p = scene.position(i);
            (p[0] - center[0]).abs() <= half && (p[1] - center[1]).abs() <= half
        })
        .collect())
}

/// The column around `center` with its source indices, or `None` when it
/// holds no point.
pub fn extract_column(
    scene: &PointCloud,
    center: [f64; 2],
    width: f64,
) -> Result<Option<(PointCloud, Vec<usize>)>> {
    let idx = column_indices(scene, center, width)?;
    if idx.is_empty() {
        return Ok(None);
    }
    Ok(Some((scene.select(&idx)?, idx)))
}

/// Centers of the occupied cells of a horizontal grid with square cells of
/// side `pixel_size`, in lexicographic cell order.
pub fn occupancy_grid_centers(scene: &PointCloud, pixel_size: f64) -> Result<Vec<[f64; 2]>> {
    if !(pixel_size > 0.0) {
        return Err(Error::Parameter(format!("pixel size must be positive, got {pixel_size}")));
    }
    if scene.dim() < 2 {
        return Err(Error::Dimension("occupancy grid needs at least 2-d points".into()));
    }
    let cells: BTreeSet<(i64, i64)> = (0..scene.len())
        .map(|i| {
            let p = scene.position(i);
            (
                (p[0] / pixel_size).floor() as i64,
                (p[1] / pixel_size).floor() as i64,
            )
        })
        .collect();
    Ok(cells
        .into_iter()
        .map(|(i, j)| [(i as f64 + 0.5) * pixel_size, (j as f64 + 0.5) * pixel_size])
        .collect())
}

/// Label of the nearest labeled point for every row of `full`.
pub fn propagate_labels_nn(labeled: &Tensor, labels: &[usize], full: &Tensor) -> Result<Vec<usize>> {
    if labels.len() != labeled.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} points",
            labels.len(),
            labeled.rows()
        )));
    }
    let tree = KdTree::build(labeled)?;
    if full.cols() != tree.dim() {
        return Err(Error::Dimension("labeled and full clouds differ in dimension".into()));
    }
    Ok((0..full.rows())
        .map(|i| labels[tree.knn(full.row(i), 1)[0]])
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::with_unit_features(Tensor::new(&[n, 2], (0..2 * n).map(|v| v as f64).collect()).unwrap())
            .unwrap()
    }

    #[test]
    fn same_size_is_a_permutation() {
        let (_, mut map) = fixed_size_select(&line(9), 9, &mut Rng::seed_from_u64(1)).unwrap();
        map.sort_unstable();
        assert_eq!(map, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn duplication_covers_every_point() {
        let (sel, map) = fixed_size_select(&line(3), 7, &mut Rng::seed_from_u64(2)).unwrap();
        assert_eq!(sel.len(), 7);
        for i in 0..3 {
            assert!(map.iter().filter(|&&m| m == i).count() >= 2);
        }
    }

    #[test]
    fn selection_is_reproducible() {
        let cloud = line(10_000);
        let a = fixed_size_select(&cloud, 2500, &mut Rng::seed_from_u64(5)).unwrap().1;
        let b = fixed_size_select(&cloud, 2500, &mut Rng::seed_from_u64(5)).unwrap().1;
        assert_eq!(a, b);
        let distinct: BTreeSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 2500);
    }

    #[test]
    fn column_membership() {
        let scene = PointCloud::with_unit_features(
            Tensor::from_rows(&[vec![0.5, 0.5, 100.0], vec![1.5, 0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(column_indices(&scene, [0.0, 0.0], 2.0).unwrap(), vec![0]);
        assert!(column_indices(&scene, [0.0, 0.0], 0.0).is_err());
        assert!(extract_column(&scene, [50.0, 50.0], 2.0).unwrap().is_none());
    }

    #[test]
    fn column_matches_filter_oracle() {
        let mut rng = Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen::<f64>()])
            .collect();
        let scene = PointCloud::with_unit_features(Tensor::from_rows(&rows).unwrap()).unwrap();
        let got = column_indices(&scene, [5.0, 5.0], 2.0).unwrap();
        let oracle: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, p)| (4.0..=6.0).contains(&p[0]) && (4.0..=6.0).contains(&p[1]))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, oracle);
        let frac = got.len() as f64 / rows.len() as f64;
        assert!((frac - 0.04).abs() < 0.01, "{frac}");
    }

    #[test]
    fn grid_centers() {
        let one = PointCloud::with_unit_features(Tensor::from_rows(&[vec![0.26, 0.74, 1.0]]).unwrap()).unwrap();
        assert_eq!(occupancy_grid_centers(&one, 0.5).unwrap(), vec![[0.25, 0.75]]);
        let two = PointCloud::with_unit_features(
            Tensor::from_rows(&[vec![0.1, 0.1, 0.0], vec![0.4, 0.2, 9.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(occupancy_grid_centers(&two, 0.5).unwrap().len(), 1);
    }

    #[test]
    fn nn_labels() {
        let labeled = Tensor::from_rows(&[vec![0.0, 0.0], vec![10.0, 0.0]]).unwrap();
        let full = Tensor::from_rows(&[vec![1.0, 1.0], vec![9.0, -1.0], vec![10.0, 0.0]]).unwrap();
        assert_eq!(propagate_labels_nn(&labeled, &[3, 7], &full).unwrap(), vec![3, 7, 7]);
        let single = Tensor::from_rows(&[vec![5.0, 5.0]]).unwrap();
        assert_eq!(propagate_labels_nn(&single, &[2], &full).unwrap(), vec![2, 2, 2]);
    }
}
