#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace accsampler {

// Layer types understood by both the feature-extractor builder and the MAC
// counter: "conv2d", "batchnorm2d", "relu", "relu6", "residual" (body + skip
// add, input and output shapes must agree) and "global_avg_pool".
struct LayerDesc {
    std::string type;
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    bool bias = false;
    std::vector<LayerDesc> body;
};

struct BackboneSpec {
    std::string arch;
    int feature_dim = 0;
    std::optional<std::string> pretrained;
    std::vector<LayerDesc> layers;
};

/// Four stride-2 3x3 conv + ReLU blocks and global average pooling.
BackboneSpec tiny_conv_spec(int feature_dim = 64, std::vector<int> widths = {});
/// MobileNet-v2 (width 1.0) feature extractor: stem, 17 inverted residual
/// blocks, 1x1 conv to 1280 channels, global average pooling.
BackboneSpec mobilenet_v2_spec();
BackboneSpec backbone_spec_for(const std::string& arch, int feature_dim);

void to_json(nlohmann::json& j, const LayerDesc& l);
void from_json(const nlohmann::json& j, LayerDesc& l);
void to_json(nlohmann::json& j, const BackboneSpec& s);
void from_json(const nlohmann::json& j, BackboneSpec& s);

} // namespace accsampler
