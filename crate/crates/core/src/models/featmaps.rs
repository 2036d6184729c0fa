use std::path::{Path, PathBuf};

use image::GrayImage;

use super::network::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::{Graph, Tensor};

/// Layers whose maps can be exported.
pub const FEATURE_LAYERS: [&str; 7] = ["conv1", "pool1", "conv2", "pool2", "conv3", "layer6", "layer7"];

/// One channel of one frame as an 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMap {
    pub layer: String,
    pub frame: usize,
    pub channel: usize,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl FeatureMap {
    pub fn file_name(&self) -> String {
        format!("{}_t{}_c{}.png", self.layer, self.frame, self.channel)
    }

    pub fn write_png(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(self.file_name());
        let img = GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .ok_or_else(|| Error::shape("feature map pixel count does not match its extent"))?;
        img.save(&path)?;
        Ok(path)
    }
}

/// Min-max scaling to 0..=255; a constant map becomes mid-gray.
fn to_gray<T: Scalar>(values: &[T]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let v = v.to_f64_lossy();
        (lo.min(v), hi.max(v))
    });
    if hi <= lo {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v.to_f64_lossy() - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

impl<T: Scalar> Model<T> {
    /// Evaluation-mode maps of `layer` for the given frames, one image per
    /// channel per frame.
    pub fn export_feature_maps(&self, clip: &Tensor<T>, layer: &str, frames: &[usize]) -> Result<Vec<FeatureMap>> {
        if !FEATURE_LAYERS.contains(&layer) {
            return Err(Error::config(format!(
                "unknown layer {layer:?}; available: {}",
                FEATURE_LAYERS.join(", ")
            )));
        }
        let mut g = Graph::new();
        let params = self.register(&mut g);
        let x = g.constant(clip.clone());
        let out = self.forward_vars(&mut g, x, &params, None, true)?;
        let (_, var) = out
            .maps
            .iter()
            .find(|(name, _)| *name == layer)
            .ok_or_else(|| Error::config(format!("layer {layer} produced no maps")))?;
        let maps = g.value(*var);
        let [steps, channels, h, w] = maps.shape().try_into().map_err(|_| {
            Error::shape(format!("layer {layer} maps have shape {:?}", maps.shape()))
        })?;
        let mut images = Vec::new();
        for &t in frames {
            if t >= steps {
                return Err(Error::OutOfRange(format!("frame {t} of a {steps}-frame clip")));
            }
            for c in 0..channels {
                let start = (t * channels + c) * h * w;
                images.push(FeatureMap {
                    layer: layer.to_string(),
                    frame: t,
                    channel: c,
                    width: w as u32,
                    height: h as u32,
                    pixels: to_gray(&maps.data()[start..start + h * w]),
                });
            }
        }
        Ok(images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ModelConfig, Widths};

    #[test]
    fn gray_scaling() {
        assert_eq!(to_gray(&[1.0f32, 2.0, 3.0]), vec![0, 128, 255]);
        assert_eq!(to_gray(&[0.5f64; 4]), vec![128; 4]);
    }

    #[test]
    fn zero_model_gives_mid_gray_with_trace_extents() {
        let cfg = ModelConfig {
            architecture: Architecture::Convgru2d,
            input_size: 32,
            widths: Widths::uniform(5),
            ..ModelConfig::default()
        };
        let m = Model::<f32>::zeros(cfg).unwrap();
        let clip = Tensor::full(&m.clip_shape(3), 0.7f32);
        let maps = m.export_feature_maps(&clip, "conv1", &[0, 2]).unwrap();
        assert_eq!(maps.len(), 10);
        let extent = m.trace().get("conv1").unwrap().shape[1];
        for f in &maps {
            assert_eq!((f.width as usize, f.height as usize), (extent, extent));
            assert!(f.pixels.iter().all(|&p| p == 128));
        }
        assert_eq!(maps[6].file_name(), "conv1_t2_c1.png");
        assert!(m.export_feature_maps(&clip, "fc9", &[0]).is_err());
        assert!(m.export_feature_maps(&clip, "layer7", &[3]).is_err());
    }
}
