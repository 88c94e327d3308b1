//! The binary frame format: encode a model update, show its layout, and
//! show that corruption and fragmentation are handled.
//!
//! ```text
//! cargo run --example wire_protocol
//! ```

use fedcrop::learner::{init_model, LearnerConfig};
use fedcrop::transport::{decode, decode_params, encode_params, Frame, FrameDecoder, MessageType, WireDtype, HEADER_LEN};

fn main() -> fedcrop::Result<()> {
    let params = init_model(&LearnerConfig::default(), 0)?;
    let payload = encode_params(&params, WireDtype::F64)?;
    let frame = Frame::new(MessageType::ModelUpdate, 3, 2, payload);
    let bytes = frame.encode()?;
    println!("{} tensors, {} values -> {} byte frame", params.len(), params.num_values(), bytes.len());
    println!("header {:02x?}", &bytes[..HEADER_LEN]);
    println!("crc32 trailer {:02x?}", &bytes[bytes.len() - 4..]);

    let back = decode_params(&decode(&bytes)?.payload)?;
    println!("decoded model identical: {}", back.bit_eq(&params));

    let mut corrupted = bytes.clone();
    corrupted[HEADER_LEN + 100] ^= 0x10;
    match decode(&corrupted) {
        Err(e) => println!("flipped one payload bit: {e}"),
        Ok(_) => println!("flipped one payload bit: not detected"),
    }

    let mut decoder = FrameDecoder::new();
    let mut frames = 0;
    for piece in bytes.repeat(3).chunks(1000) {
        decoder.push(piece);
        while let Some(f) = decoder.next_frame()? {
            frames += usize::from(f == frame);
        }
    }
    println!("three frames fed in 1000-byte pieces: {frames} decoded intact");

    let narrow = decode_params(&encode_params(&params, WireDtype::F32)?)?;
    println!(
        "f32 payload is {} bytes, largest rounding error {:.1e}",
        encode_params(&params, WireDtype::F32)?.len(),
        narrow.max_abs_diff(&params).unwrap_or(0.0)
    );
    Ok(())
}
