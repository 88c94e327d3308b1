//! Byte-exact framing of model updates and the channels that carry them.

mod channel;
mod frame;
mod payload;

pub use channel::{
    connect_tcp, loopback_listener, loopback_pair, loopback_pair_fragmented, Acceptor, Channel, FrameReceiver,
    FrameSender, LoopbackAcceptor, LoopbackConnector, TcpAcceptor,
};
pub use frame::{decode, encode, Frame, FrameDecoder, MessageType, HEADER_LEN, MAGIC, MAX_PAYLOAD, TRAILER_LEN, VERSION};
pub use payload::{
    decode_json, decode_params, decode_predictions, encode_json, encode_params, encode_predictions, Hello,
    PredictRequest, TrainingReport, WireDtype,
};
