use serde::{Deserialize, Serialize};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use uuid::Uuid;

use crate::{BusError, MessageKind};

/// Largest frame body accepted on the wire.
pub const MAX_FRAME_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Publish,
    Subscribe,
    Ack,
}

/// One unit on the wire. Brokers deliver messages to subscribers as
/// `publish` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub op: Op,
    pub routing_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<MessageKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_id: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_at: Option<f64>,
    /// Set on an `ack` when the broker refused the frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Frame {
    pub fn subscribe(routing_key: impl Into<String>) -> Self {
        Self::bare(Op::Subscribe, routing_key.into(), None)
    }

    pub fn ack(routing_key: impl Into<String>, message_id: Option<Uuid>) -> Self {
        Self::bare(Op::Ack, routing_key.into(), message_id)
    }

    fn bare(op: Op, routing_key: String, message_id: Option<Uuid>) -> Self {
        Self {
            op,
            routing_key,
            kind: None,
            message_id,
            payload: None,
            sent_at: None,
            error: None,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, BusError> {
        let body = serde_json::to_vec(self).map_err(|e| BusError::Malformed(e.to_string()))?;
        if body.len() > MAX_FRAME_LEN {
            return Err(BusError::Oversized { len: body.len() });
        }
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream.
pub async fn read_frame<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Option<Frame>, BusError> {
    Ok(read_raw(reader).await?.map(|(frame, _)| frame))
}

/// Like [`read_frame`] but also hands back the JSON body as received.
pub(crate) async fn read_raw<R: AsyncRead + Unpin>(
    reader: &mut R,
) -> Result<Option<(Frame, Vec<u8>)>, BusError> {
    let mut len_buf = [0u8; 4];
    match reader.read_exact(&mut len_buf).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(BusError::Oversized { len });
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).await?;
    let frame = serde_json::from_slice(&body).map_err(|e| BusError::Malformed(e.to_string()))?;
    Ok(Some((frame, body)))
}

pub async fn write_frame<W: AsyncWrite + Unpin>(writer: &mut W, frame: &Frame) -> Result<(), BusError> {
    let bytes = frame.encode()?;
    writer.write_all(&bytes).await?;
    writer.flush().await?;
    Ok(())
}
