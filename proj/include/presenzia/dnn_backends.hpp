#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "presenzia/codec.hpp"
#include "presenzia/detection.hpp"
#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"

// Adapters for pretrained networks loaded through OpenCV's dnn module.
// Weights are never bundled; a missing file raises BackendUnavailable.

namespace presenzia {

namespace detail {

inline cv::dnn::Net load_net(const std::string& model, const std::string& config = {}) {
  namespace fs = std::filesystem;
  if (!fs::exists(model)) fail(ErrorCode::BackendUnavailable, "model file not found: " + model);
  if (!config.empty() && !fs::exists(config)) fail(ErrorCode::BackendUnavailable, "model config not found: " + config);
  try {
    auto net = cv::dnn::readNet(model, config);
    if (net.empty()) fail(ErrorCode::BackendUnavailable, "could not load network " + model);
    return net;
  } catch (const cv::Exception& e) {
    fail(ErrorCode::BackendUnavailable, "could not load network " + model + ": " + e.what());
  }
}

}  // namespace detail

struct DnnEmbedderOptions {
  std::string model_path;
  std::string config_path;
  int input_side = 96;
  double scale = 1.0 / 255.0;
  bool swap_rb = true;
  std::string name = "dnn";
};

/// Runs a network whose single output is a 128-d embedding (normalized here).
class DnnEmbedder final : public EmbedderBackend {
 public:
  explicit DnnEmbedder(DnnEmbedderOptions opt) : opt_(std::move(opt)), net_(detail::load_net(opt_.model_path, opt_.config_path)) {}

  std::string name() const override { return opt_.name; }
  int input_side() const override { return opt_.input_side; }
  bool deterministic() const override { return true; }

  Embedding embed(const FaceChip& chip) const override {
    const auto resized = resize_bilinear(chip.image(), opt_.input_side, opt_.input_side);
    const cv::Mat blob = cv::dnn::blobFromImage(to_bgr_mat(resized), opt_.scale, cv::Size(opt_.input_side, opt_.input_side),
                                                cv::Scalar(), opt_.swap_rb, false);
    cv::Mat out;
    {
      std::lock_guard lock(mu_);
      net_.setInput(blob);
      out = net_.forward().clone();
    }
    if (out.total() != kEmbeddingDim) fail(ErrorCode::BackendUnavailable, "embedder output has " + std::to_string(out.total()) + " values, expected 128");
    out = out.reshape(1, 1);
    out.convertTo(out, CV_64F);
    return l2_normalize(std::span<const double>(out.ptr<double>(0), kEmbeddingDim));
  }

 private:
  DnnEmbedderOptions opt_;
  mutable std::mutex mu_;
  mutable cv::dnn::Net net_;
};

// --- cascade stages (P/R/O-Net, Caffe) ------------------------------------

struct CascadeModelPaths {
  std::string pnet_prototxt, pnet_caffemodel;
  std::string rnet_prototxt, rnet_caffemodel;
  std::string onet_prototxt, onet_caffemodel;
  // Feed the network the transposed image (some exported weights expect it).
  bool transposed = false;

  static CascadeModelPaths in_directory(const std::string& dir) {
    const auto p = [&](const char* f) { return (std::filesystem::path(dir) / f).string(); };
    return {p("det1.prototxt"), p("det1.caffemodel"), p("det2.prototxt"), p("det2.caffemodel"), p("det3.prototxt"), p("det3.caffemodel"), false};
  }
};

class CaffeStage final : public StagePredictor {
 public:
  CaffeStage(Stage s, const std::string& prototxt, const std::string& caffemodel, bool transposed)
      : stage_(s), transposed_(transposed), net_(detail::load_net(caffemodel, prototxt)) {}

  Stage stage() const override { return stage_; }
  int input_side() const override {
    switch (stage_) {
      case Stage::proposal: return kCell;
      case Stage::refine: return 24;
      case Stage::output: return 48;
    }
    return kCell;
  }

  std::vector<Candidate> predict(const RgbImage& image) const override {
    require_valid(image);
    const cv::Mat blob = make_blob(image);
    std::vector<cv::Mat> outs;
    {
      std::lock_guard lock(mu_);
      net_.setInput(blob);
      if (stage_ == Stage::proposal)
        net_.forward(outs, std::vector<cv::String>{"prob1", "conv4-2"});
      else if (stage_ == Stage::refine)
        net_.forward(outs, std::vector<cv::String>{"prob1", "conv5-2"});
      else
        net_.forward(outs, std::vector<cv::String>{"prob1", "conv6-2", "conv6-3"});
    }
    return stage_ == Stage::proposal ? decode_proposals(outs) : decode_single(outs, image.width);
  }

 private:
  static constexpr int kCell = 12;
  static constexpr int kStride = 2;

  // NCHW float blob, RGB channel order, (v - 127.5) / 128.
  cv::Mat make_blob(const RgbImage& image) const {
    const int h = transposed_ ? image.width : image.height;
    const int w = transposed_ ? image.height : image.width;
    const int dims[] = {1, 3, h, w};
    cv::Mat blob(4, dims, CV_32F);
    float* data = blob.ptr<float>();
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q) {
          const int x = transposed_ ? r : q, y = transposed_ ? q : r;
          data[(static_cast<std::size_t>(c) * h + r) * w + q] = static_cast<float>((image.at(x, y, c) - 127.5) * 0.0078125);
        }
    return blob;
  }

  // Regression offsets arrive in network order; swap axes back when transposed.
  std::array<double, 4> unswap(double a, double b, double c, double d) const {
    if (transposed_) return {b, a, d, c};
    return {a, b, c, d};
  }

  std::vector<Candidate> decode_proposals(const std::vector<cv::Mat>& outs) const {
    const cv::Mat& prob = outs[0];
    const cv::Mat& reg = outs[1];
    if (prob.dims != 4 || reg.dims != 4) fail(ErrorCode::BackendUnavailable, "unexpected proposal output shape");
    const int oh = prob.size[2], ow = prob.size[3];
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    const float* p = prob.ptr<float>();
    const float* g = reg.ptr<float>();
    std::vector<Candidate> out;
    for (int r = 0; r < oh; ++r)
      for (int q = 0; q < ow; ++q) {
        const std::size_t i = static_cast<std::size_t>(r) * ow + q;
        const double score = p[plane + i];
        const int gx = transposed_ ? r : q, gy = transposed_ ? q : r;
        const double x1 = gx * kStride, y1 = gy * kStride;
        const auto d = unswap(g[i], g[plane + i], g[2 * plane + i], g[3 * plane + i]);
        const double bx1 = x1 + d[0] * kCell, by1 = y1 + d[1] * kCell;
        const double bx2 = x1 + kCell + d[2] * kCell, by2 = y1 + kCell + d[3] * kCell;
        if (bx2 <= bx1 || by2 <= by1) continue;
        out.push_back({{bx1, by1, bx2 - bx1, by2 - by1}, score, std::nullopt});
      }
    return out;
  }

  std::vector<Candidate> decode_single(const std::vector<cv::Mat>& outs, int side) const {
    const float* p = outs[0].ptr<float>();
    const float* g = outs[1].ptr<float>();
    const auto d = unswap(g[0], g[1], g[2], g[3]);
    const double bx1 = d[0] * side, by1 = d[1] * side;
    const double bx2 = side + d[2] * side, by2 = side + d[3] * side;
    if (bx2 <= bx1 || by2 <= by1) return {};
    Candidate c{{bx1, by1, bx2 - bx1, by2 - by1}, p[1], std::nullopt};
    if (stage_ == Stage::output) {
      const float* l = outs[2].ptr<float>();
      FaceLandmarks lm{};
      for (std::size_t k = 0; k < 5; ++k) {
        const double a = l[k] * side, b = l[k + 5] * side;
        lm[k] = transposed_ ? Point{b, a} : Point{a, b};
      }
      c.landmarks = lm;
    }
    return {c};
  }

  Stage stage_;
  bool transposed_;
  mutable std::mutex mu_;
  mutable cv::dnn::Net net_;
};

inline FaceDetector make_cascade_detector(const CascadeModelPaths& paths, CascadeConfig config = {}) {
  return FaceDetector(std::make_shared<CaffeStage>(Stage::proposal, paths.pnet_prototxt, paths.pnet_caffemodel, paths.transposed),
                      std::make_shared<CaffeStage>(Stage::refine, paths.rnet_prototxt, paths.rnet_caffemodel, paths.transposed),
                      std::make_shared<CaffeStage>(Stage::output, paths.onet_prototxt, paths.onet_caffemodel, paths.transposed),
                      config);
}

}  // namespace presenzia
