use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Selected token embeddings with their row-major grid locations.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    locations: Vec<usize>,
    embeddings: Matrix,
}

impl TokenSet {
    /// Locations must be strictly increasing, one per embedding row.
    pub fn new(locations: Vec<usize>, embeddings: Matrix) -> Result<Self> {
        if locations.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} locations for {} embeddings",
                locations.len(),
                embeddings.rows()
            )));
        }
        if locations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "token locations must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            locations,
            embeddings,
        })
    }

    pub fn locations(&self) -> &[usize] {
        &self.locations
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn into_parts(self) -> (Vec<usize>, Matrix) {
        (self.locations, self.embeddings)
    }

    pub(crate) fn with_embeddings(&self, embeddings: Matrix) -> TokenSet {
        debug_assert_eq!(embeddings.rows(), self.locations.len());
        TokenSet {
            locations: self.locations.clone(),
            embeddings,
        }
    }
}

fn check_locations(locations: &[usize], len: usize) -> Result<()> {
    match locations.iter().find(|&&l| l >= len) {
        Some(&location) => Err(Error::LocationOutOfRange { location, len }),
        None => Ok(()),
    }
}

/// Selects the rows of `tensor` at `locations`.
pub fn gather(tensor: &Matrix, locations: &[usize]) -> Result<TokenSet> {
    check_locations(locations, tensor.rows())?;
    let mut rows = Matrix::zeros(locations.len(), tensor.cols());
    for (i, &loc) in locations.iter().enumerate() {
        rows.row_mut(i).copy_from_slice(tensor.row(loc));
    }
    TokenSet::new(locations.to_vec(), rows)
}

/// Writes token rows into a copy of `base`; other rows are untouched.
pub fn scatter(tokens: &TokenSet, base: &Matrix) -> Result<Matrix> {
    let mut out = base.clone();
    scatter_into(tokens, &mut out)?;
    Ok(out)
}

pub(crate) fn scatter_into(tokens: &TokenSet, base: &mut Matrix) -> Result<()> {
    check_locations(&tokens.locations, base.rows())?;
    if tokens.embeddings.cols() != base.cols() && !tokens.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "token width {} vs base width {}",
            tokens.embeddings.cols(),
            base.cols()
        )));
    }
    for (i, &loc) in tokens.locations.iter().enumerate() {
        base.row_mut(loc).copy_from_slice(tokens.embeddings.row(i));
    }
    Ok(())
}
