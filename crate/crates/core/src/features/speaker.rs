use ndarray::Array1;

use crate::dims::SPEAKERS;
use crate::error::{Error, Result};

/// One of the 17 corpus speakers, encoded one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpeakerId(usize);

impl SpeakerId {
    pub fn new(id: usize) -> Result<Self> {
        if id >= SPEAKERS {
            return Err(Error::Invalid(format!("speaker id {id} out of range 0..{SPEAKERS}")));
        }
        Ok(SpeakerId(id))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn one_hot(self) -> Array1<f64> {
        let mut v = Array1::zeros(SPEAKERS);
        v[self.0] = 1.0;
        v
    }
}

pub fn speaker_onehot(id: usize) -> Result<Array1<f64>> {
    SpeakerId::new(id).map(SpeakerId::one_hot)
}
