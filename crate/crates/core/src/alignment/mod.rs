//! Topology-text alignment: the cosine similarity matrix between graph and
//! text embeddings, the symmetric node-level contrastive loss, the edge-level
//! consistency loss, and the joint training loop.

mod train;

use ndarray::Array2;

pub use train::{train_alignment, AlignmentConfig, AlignmentRun, EpochRecord};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// A dense, finite similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Array2<f64>);

impl SimilarityMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.t().to_owned())
    }
}

/// Rows divided by their L2 norm. All-zero rows stay zero.
pub fn row_normalize(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    out
}

fn same_shape(z: &EmbeddingMatrix, h: &EmbeddingMatrix) -> Result<()> {
    if z.rows() != h.rows() || z.dim() != h.dim() {
        return Err(Error::Shape(format!(
            "graph embeddings are {}x{} but text embeddings are {}x{}",
            z.rows(),
            z.dim(),
            h.rows(),
            h.dim()
        )));
    }
    Ok(())
}

/// `Λ1 = (Z̃ H̃ᵀ) · exp(τ)` with row-normalized `Z̃`, `H̃`.
pub fn node_similarity(z: &EmbeddingMatrix, h: &EmbeddingMatrix, tau: f64) -> Result<SimilarityMatrix> {
    same_shape(z, h)?;
    let zt = row_normalize(z.as_array());
    let ht = row_normalize(h.as_array());
    SimilarityMatrix::new(zt.dot(&ht.t()) * tau.exp())
}

/// Row-wise softmax and the mean cross-entropy against the diagonal targets.
fn diagonal_cross_entropy(a: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = a.nrows();
    let mut p = Array2::zeros(a.dim());
    let mut loss = 0.0;
    for i in 0..n {
        let row = a.row(i);
        let m = row.fold(f64::NEG_INFINITY, |x, &y| x.max(y));
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - a[[i, i]];
        for j in 0..a.ncols() {
            p[[i, j]] = (a[[i, j]] - lse).exp();
        }
    }
    (loss / n as f64, p)
}

fn check_square(l: &SimilarityMatrix) -> Result<usize> {
    let (r, c) = l.shape();
    if r != c || r == 0 {
        return Err(Error::Shape(format!("node alignment loss needs a non-empty square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// Symmetric cross-entropy with target `i` for row `i` and column `i`.
pub fn node_alignment_loss(lambda1: &SimilarityMatrix) -> Result<f64> {
    node_alignment_loss_grad(lambda1).map(|(l, _)| l)
}

/// Loss plus its gradient with respect to every entry of `Λ1`.
pub fn node_alignment_loss_grad(lambda1: &SimilarityMatrix) -> Result<(f64, Array2<f64>)> {
    let n = check_square(lambda1)?;
    let a = lambda1.as_array();
    let (row_loss, p_row) = diagonal_cross_entropy(a);
    let at = a.t().to_owned();
    let (col_loss, p_col_t) = diagonal_cross_entropy(&at);
    let nf = n as f64;
    let mut grad = (p_row + &p_col_t.t()) * (0.5 / nf);
    for i in 0..n {
        grad[[i, i]] -= 1.0 / nf;
    }
    Ok((0.5 * (row_loss + col_loss), grad))
}

fn check_edges(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::Shape(format!("edge ({a}, {b}) is out of range for {n} rows")));
    }
    Ok(())
}

/// The edge loss on already-normalized rows, with gradients with respect to
/// those normalized rows. An empty edge list gives zero.
pub(crate) fn edge_loss_normalized(zt: &Array2<f64>, ht: &Array2<f64>, edges: &[(usize, usize)]) -> (f64, Array2<f64>, Array2<f64>) {
    let mut gz = Array2::zeros(zt.dim());
    let mut gh = Array2::zeros(ht.dim());
    if edges.is_empty() {
        return (0.0, gz, gh);
    }
    let m = edges.len() as f64;
    let mut loss = 0.0;
    for &(a, b) in edges {
        let d = zt.row(a).dot(&zt.row(b)) - ht.row(a).dot(&ht.row(b));
        loss += d * d;
        let c = 2.0 * d / m;
        let (za, zb) = (zt.row(a).to_owned(), zt.row(b).to_owned());
        let (ha, hb) = (ht.row(a).to_owned(), ht.row(b).to_owned());
        gz.row_mut(a).scaled_add(c, &zb);
        gz.row_mut(b).scaled_add(c, &za);
        gh.row_mut(a).scaled_add(-c, &hb);
        gh.row_mut(b).scaled_add(-c, &ha);
    }
    (loss / m, gz, gh)
}

/// Back-propagates through row normalization: for `y = x/|x|`,
/// `∂L/∂x = (g − y (y·g)) / |x|`. Zero rows receive zero gradient.
fn through_normalization(x: &Array2<f64>, y: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        let n = x.row(i).dot(&x.row(i)).sqrt();
        if n > 0.0 {
            let yg = y.row(i).dot(&g.row(i));
            let r = (&g.row(i) - &(&y.row(i) * yg)) / n;
            out.row_mut(i).assign(&r);
        }
    }
    out
}

/// Mean over edges of `(z̃_i·z̃_j − h̃_i·h̃_j)²`. An empty edge list gives zero.
pub fn edge_alignment_loss(z: &EmbeddingMatrix, h: &EmbeddingMatrix, edges: &[(usize, usize)]) -> Result<f64> {
    edge_alignment_loss_grad(z, h, edges).map(|(l, _, _)| l)
}

/// Edge loss plus gradients with respect to the raw (unnormalized) `Z` and `H`.
pub fn edge_alignment_loss_grad(
    z: &EmbeddingMatrix,
    h: &EmbeddingMatrix,
    edges: &[(usize, usize)],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    same_shape(z, h)?;
    check_edges(z.rows(), edges)?;
    if edges.is_empty() {
        log::debug!("edge alignment loss over an empty edge set is taken as 0");
    }
    let zt = row_normalize(z.as_array());
    let ht = row_normalize(h.as_array());
    let (loss, gzt, ght) = edge_loss_normalized(&zt, &ht, edges);
    Ok((
        loss,
        through_normalization(z.as_array(), &zt, &gzt),
        through_normalization(h.as_array(), &ht, &ght),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn emb(a: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(a).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let i = emb(Array2::eye(2));
        assert_eq!(node_similarity(&i, &i, 0.0).unwrap().as_array(), &Array2::<f64>::eye(2));
        let two = node_similarity(&i, &i, 2f64.ln()).unwrap();
        assert!((two.as_array() - &(Array2::<f64>::eye(2) * 2.0)).iter().all(|d| d.abs() < 1e-12));
        let v = emb(array![[3.0, 4.0]]);
        assert!((node_similarity(&v, &v, 0.0).unwrap().as_array()[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rows_normalize_to_zero() {
        let z = emb(array![[0.0, 0.0], [1.0, 0.0]]);
        let s = node_similarity(&z, &z, 0.0).unwrap();
        assert_eq!(s.as_array(), &array![[0.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn node_loss_worked_values() {
        let id = SimilarityMatrix::new(Array2::eye(2)).unwrap();
        let anti = SimilarityMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        // -ln(e / (e + 1)) and -ln(1 / (e + 1))
        let e = std::f64::consts::E;
        assert!((node_alignment_loss(&id).unwrap() - (1.0 + 1.0 / e).ln()).abs() < 1e-12);
        assert!((node_alignment_loss(&anti).unwrap() - (1.0 + e).ln()).abs() < 1e-12);
        assert!((node_alignment_loss(&id).unwrap() - 0.31326).abs() < 1e-5);
        assert!((node_alignment_loss(&anti).unwrap() - 1.31326).abs() < 1e-5);
    }

    #[test]
    fn node_loss_decreases_as_diagonal_grows() {
        let mut prev = f64::INFINITY;
        for c in [0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
            let l = node_alignment_loss(&SimilarityMatrix::new(Array2::eye(3) * c).unwrap()).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn non_square_rejected() {
        let s = SimilarityMatrix::new(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(node_alignment_loss(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn edge_loss_examples() {
        let z = emb(Array2::eye(2));
        let h = emb(array![[1.0, 0.0], [1.0, 0.0]]);
        assert!((edge_alignment_loss(&z, &h, &[(0, 1)]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(edge_alignment_loss(&z, &z, &[(0, 1)]).unwrap(), 0.0);
        assert_eq!(edge_alignment_loss(&z, &h, &[]).unwrap(), 0.0);
        let twice = edge_alignment_loss(&z, &h, &[(0, 1), (0, 1)]).unwrap();
        assert!((twice - 1.0).abs() < 1e-12);
        assert!(matches!(edge_alignment_loss(&z, &h, &[(0, 5)]), Err(Error::Shape(_))));
    }
}
