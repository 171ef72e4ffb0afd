//! Fixed tensor layout of the network. All parameters live in one flat
//! vector; each named tensor is a contiguous slice of it.

pub const CONV_CHANNELS: usize = 32;
/// Spatial side length entering each conv layer, then after the last one.
pub const SPATIAL: [usize; 5] = [42, 21, 11, 6, 3];
pub const FLAT: usize = CONV_CHANNELS * 3 * 3;
pub const HIDDEN: usize = 256;
pub const GATES: usize = 4 * HIDDEN;
pub const N_DIRECTIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    Conv1W,
    Conv1B,
    Conv2W,
    Conv2B,
    Conv3W,
    Conv3B,
    Conv4W,
    Conv4B,
    LstmWih,
    LstmWhh,
    LstmB,
    PolicyW,
    PolicyB,
    ValueW,
    ValueB,
    MagnitudeW,
    MagnitudeB,
}

pub const TENSORS: [Tensor; 17] = [
    Tensor::Conv1W,
    Tensor::Conv1B,
    Tensor::Conv2W,
    Tensor::Conv2B,
    Tensor::Conv3W,
    Tensor::Conv3B,
    Tensor::Conv4W,
    Tensor::Conv4B,
    Tensor::LstmWih,
    Tensor::LstmWhh,
    Tensor::LstmB,
    Tensor::PolicyW,
    Tensor::PolicyB,
    Tensor::ValueW,
    Tensor::ValueB,
    Tensor::MagnitudeW,
    Tensor::MagnitudeB,
];

impl Tensor {
    pub fn name(self) -> &'static str {
        match self {
            Tensor::Conv1W => "conv1.weight",
            Tensor::Conv1B => "conv1.bias",
            Tensor::Conv2W => "conv2.weight",
            Tensor::Conv2B => "conv2.bias",
            Tensor::Conv3W => "conv3.weight",
            Tensor::Conv3B => "conv3.bias",
            Tensor::Conv4W => "conv4.weight",
            Tensor::Conv4B => "conv4.bias",
            Tensor::LstmWih => "lstm.weight_ih",
            Tensor::LstmWhh => "lstm.weight_hh",
            Tensor::LstmB => "lstm.bias",
            Tensor::PolicyW => "policy.weight",
            Tensor::PolicyB => "policy.bias",
            Tensor::ValueW => "value.weight",
            Tensor::ValueB => "value.bias",
            Tensor::MagnitudeW => "magnitude.weight",
            Tensor::MagnitudeB => "magnitude.bias",
        }
    }

    pub fn shape(self) -> &'static [usize] {
        const C: usize = CONV_CHANNELS;
        match self {
            Tensor::Conv1W => &[C, 1, 3, 3],
            Tensor::Conv2W | Tensor::Conv3W | Tensor::Conv4W => &[C, C, 3, 3],
            Tensor::Conv1B | Tensor::Conv2B | Tensor::Conv3B | Tensor::Conv4B => &[C],
            Tensor::LstmWih => &[GATES, FLAT],
            Tensor::LstmWhh => &[GATES, HIDDEN],
            Tensor::LstmB => &[GATES],
            Tensor::PolicyW => &[N_DIRECTIONS, HIDDEN],
            Tensor::PolicyB => &[N_DIRECTIONS],
            Tensor::ValueW | Tensor::MagnitudeW => &[1, HIDDEN],
            Tensor::ValueB | Tensor::MagnitudeB => &[1],
        }
    }

    pub fn len(self) -> usize {
        self.shape().iter().product()
    }

    pub fn range(self) -> std::ops::Range<usize> {
        let mut start = 0;
        for t in TENSORS {
            if t == self {
                return start..start + t.len();
            }
            start += t.len();
        }
        unreachable!()
    }

    pub fn conv_weight(layer: usize) -> Tensor {
        [Tensor::Conv1W, Tensor::Conv2W, Tensor::Conv3W, Tensor::Conv4W][layer]
    }

    pub fn conv_bias(layer: usize) -> Tensor {
        [Tensor::Conv1B, Tensor::Conv2B, Tensor::Conv3B, Tensor::Conv4B][layer]
    }
}

pub fn param_count() -> usize {
    TENSORS.iter().map(|t| t.len()).sum()
}
