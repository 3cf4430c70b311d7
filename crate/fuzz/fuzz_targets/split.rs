/// Splits a fuzz input into a JSON header and a binary payload. The first
/// four bytes give the header length, little-endian.
pub fn split(data: &[u8]) -> Option<(&[u8], &[u8])> {
    let len = u32::from_le_bytes(data.get(..4)?.try_into().ok()?) as usize;
    let rest = &data[4..];
    (len <= rest.len()).then(|| rest.split_at(len))
}
