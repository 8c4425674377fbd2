use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type of a head: `f32` for normal runs, `f64` for
/// gradient checking.
pub trait Real: NdFloat + FromPrimitive + Default {
    /// Tag stored in serialized heads (byte width of one element).
    const WIDTH: u8;

    fn from_f64_lossy(x: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from exactly `WIDTH` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn to_bits_u64(self) -> u64;
}

impl Real for f32 {
    const WIDTH: u8 = 4;

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Real for f64 {
    const WIDTH: u8 = 8;

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}
