use serde::{Serialize, Serializer};

use crate::codec::{self, CodecError, EncodingScheme, END_SENTINEL, START_SENTINEL};
use crate::network::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderState {
    Idle,
    Receiving,
}

/// A settled incoming payment as the C&C node sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Receipt {
    pub timestamp_ns: u64,
    pub amount_sat: u64,
}

/// What one closed frame decoded to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodedFrame {
    pub timestamp_ns: u64,
    #[serde(serialize_with = "ser_result")]
    pub result: Result<String, CodecError>,
}

fn ser_result<S: Serializer>(r: &Result<String, CodecError>, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    #[serde(rename_all = "snake_case")]
    enum Out<'a> {
        Command(&'a str),
        Error(String),
    }
    match r {
        Ok(c) => Out::Command(c).serialize(s),
        Err(e) => Out::Error(e.to_string()).serialize(s),
    }
}

/// Receive side of the command channel: a start sentinel opens a frame,
/// payload amounts accumulate, the end sentinel decodes the buffer.
/// Amounts arriving while idle are kept as strays and never decoded. A
/// start sentinel inside an open frame discards the partial buffer, which
/// is how a restarted command resynchronises.
#[derive(Debug, Clone, Serialize)]
pub struct CommandTranscript {
    pub receiver: NodeId,
    #[serde(skip)]
    scheme: EncodingScheme,
    pub receipts: Vec<Receipt>,
    pub decoder_state: DecoderState,
    #[serde(skip)]
    buffer: Vec<u64>,
    pub decoded_commands: Vec<DecodedFrame>,
    pub strays: Vec<Receipt>,
    pub aborted_frames: usize,
}

impl CommandTranscript {
    pub fn new(receiver: NodeId, scheme: EncodingScheme) -> Self {
        CommandTranscript {
            receiver,
            scheme,
            receipts: Vec::new(),
            decoder_state: DecoderState::Idle,
            buffer: Vec::new(),
            decoded_commands: Vec::new(),
            strays: Vec::new(),
            aborted_frames: 0,
        }
    }

    pub fn scheme(&self) -> &EncodingScheme {
        &self.scheme
    }

    /// Amounts buffered in the currently open frame.
    pub fn pending(&self) -> &[u64] {
        &self.buffer
    }

    /// Successfully decoded commands, in arrival order.
    pub fn commands(&self) -> Vec<&str> {
        self.decoded_commands
            .iter()
            .filter_map(|d| d.result.as_deref().ok())
            .collect()
    }

    pub fn on_payment(&mut self, amount_sat: u64, timestamp_ns: u64) -> Option<Result<String, CodecError>> {
        let receipt = Receipt { timestamp_ns, amount_sat };
        self.receipts.push(receipt);
        match (self.decoder_state, amount_sat) {
            (DecoderState::Idle, START_SENTINEL) => {
                self.decoder_state = DecoderState::Receiving;
                self.buffer.clear();
                None
            }
            (DecoderState::Idle, _) => {
                self.strays.push(receipt);
                None
            }
            (DecoderState::Receiving, START_SENTINEL) => {
                self.aborted_frames += 1;
                self.buffer.clear();
                None
            }
            (DecoderState::Receiving, END_SENTINEL) => {
                self.decoder_state = DecoderState::Idle;
                let result = codec::decode(&std::mem::take(&mut self.buffer), &self.scheme);
                self.decoded_commands.push(DecodedFrame { timestamp_ns, result: result.clone() });
                Some(result)
            }
            (DecoderState::Receiving, other) => {
                self.buffer.push(other);
                None
            }
        }
    }
}
