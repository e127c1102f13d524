//! HTTP-JSON backends. Each speaks the bodies in [`super::wire`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::*;
use super::{EmbedBackend, I23dBackend, LmmBackend, LmmPart, LmmRequest, MattingBackend, T2iBackend};
use crate::error::{Error, Result};
use crate::idea::{ImageAsset, MeshAsset};

/// One POST endpoint plus credentials.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout_s: f64,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(timeout_s))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self { url: url.into(), model: model.into(), api_key, client })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let mut rb = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp =
            rb.send().map_err(
                |e| {
                    if e.is_timeout() {
                        Error::Timeout(0.0)
                    } else {
                        Error::Transport(e.to_string())
                    }
                },
            )?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Http { status: status.as_u16(), body: text.chars().take(500).collect() });
        }
        serde_json::from_str(&text)
            .map_err(|e| Error::BackendContractViolation(format!("malformed response from {}: {e}", self.url)))
    }
}

pub struct HttpLmm(pub HttpEndpoint);

impl LmmBackend for HttpLmm {
    fn complete(&self, req: &LmmRequest) -> Result<String> {
        let parts = req
            .parts
            .iter()
            .map(|p| match p {
                LmmPart::Text(t) => WirePart::Text { text: t.clone() },
                LmmPart::Image(i) => WirePart::Image { image: Blob::from_image(i) },
            })
            .collect();
        let body = LmmWireRequest {
            model: self.0.model().to_string(),
            agent: req.role.as_str().to_string(),
            system_prompt: req.system_prompt.clone(),
            parts,
            max_output_chars: req.max_output_chars,
            temperature: req.temperature,
            seed: req.seed,
        };
        let resp: LmmWireResponse = self.0.post(&body)?;
        Ok(resp.text)
    }
}

pub struct HttpT2i(pub HttpEndpoint);

impl T2iBackend for HttpT2i {
    fn generate(&self, prompt: &str, n_images: u32, seed: u64) -> Result<Vec<ImageAsset>> {
        let body = T2iWireRequest { model: self.0.model().to_string(), prompt: prompt.to_string(), n_images, seed };
        let resp: T2iWireResponse = self.0.post(&body)?;
        resp.images.iter().enumerate().map(|(i, b)| b.to_image(format!("t2i-{seed}-{i}"))).collect()
    }
}

pub struct HttpI23d(pub HttpEndpoint);

impl I23dBackend for HttpI23d {
    fn generate(&self, img: &ImageAsset, seed: u64) -> Result<MeshAsset> {
        let body = I23dWireRequest { model: self.0.model().to_string(), image: Blob::from_image(img), seed };
        let resp: I23dWireResponse = self.0.post(&body)?;
        resp.mesh.to_mesh(format!("{}-mesh", img.id))
    }
}

pub struct HttpMatting(pub HttpEndpoint);

impl MattingBackend for HttpMatting {
    fn matte(&self, img: &ImageAsset) -> Result<ImageAsset> {
        let body = MatteWireRequest { model: self.0.model().to_string(), image: Blob::from_image(img) };
        let resp: MatteWireResponse = self.0.post(&body)?;
        resp.image.to_image(format!("{}-fg", img.id))
    }
}

pub struct HttpEmbed(pub HttpEndpoint);

impl HttpEmbed {
    fn call(&self, input: EmbedInput) -> Result<Vec<f64>> {
        let body = EmbedWireRequest { model: self.0.model().to_string(), input };
        let resp: EmbedWireResponse = self.0.post(&body)?;
        Ok(resp.embedding)
    }
}

impl EmbedBackend for HttpEmbed {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.call(EmbedInput::Text { text: text.to_string() })
    }
    fn embed_image(&self, img: &ImageAsset) -> Result<Vec<f64>> {
        self.call(EmbedInput::Image { image: Blob::from_image(img) })
    }
    fn embed_mesh(&self, mesh: &MeshAsset) -> Result<Vec<f64>> {
        self.call(EmbedInput::Mesh { mesh: Blob::from_mesh(mesh) })
    }
}
