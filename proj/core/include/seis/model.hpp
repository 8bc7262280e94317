#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seis/autodiff.hpp"
#include "seis/tensor.hpp"

namespace seis {

enum class Arch { contextseisnet, unet };

std::string arch_name(Arch arch);
Arch arch_from_name(std::string_view name);

/// S prompt gathers and their labels conditioning a prediction.
struct SupportSet {
  Tensor prompts;        // [S,H,W]
  Tensor prompt_labels;  // [S,H,W]
  std::size_t size() const { return prompts.ndim() ? prompts.dim(0) : 0; }
  void validate() const;
};

/// Architecture description from which parameters are instantiated.
struct ModelSpec {
  int levels = 3;
  std::vector<int> channels = {8, 16, 32};  // nondecreasing, one per level
  int kernel_size = 3;
  std::string size_preset = "tiny";
  double leaky_slope = 0.01;
  bool use_norm = true;

  /// tiny = [8,16,32], small = [32,64,128,256], medium = [48,96,192,384],
  /// large = [64,128,256,512].
  static ModelSpec preset(std::string_view name);
  void validate() const;
};

/// Exact number of trainable scalars for a spec (running statistics are
/// buffers and do not count).
std::size_t param_count(const ModelSpec& spec, Arch arch);

struct CheckpointMeta {
  std::string model_id;
  int epoch = 0;
  std::string train_config_json;  // optional echo, empty = none
};

/// CrossBlock parameters already bound to a tape. conv1 consumes the
/// channel-concatenated (query, support) pair; conv2 updates the support
/// stream, conv3 the query stream. The terminal block of a network sets
/// update_support = false: nothing consumes its support stream, so the
/// conv2/norm_v path is neither instantiated nor run there.
struct CrossBlockVars {
  Var conv1_w, conv1_b;
  Var conv2_w, conv2_b;
  Var conv3_w, conv3_b;
  Var norm_u_gamma, norm_u_beta;
  Var norm_v_gamma, norm_v_beta;
  BatchNormBuffers norm_u_buffers, norm_v_buffers;
  bool use_norm = true;
  bool update_support = true;
};

/// One conditioning block: z_s = conv1(u || V_s) with weights shared over s;
/// u' = act(norm(conv3(mean_s z_s))); V'_s = act(norm(conv2(z_s))). The
/// support-stream normalization pools statistics over the whole set, so the
/// block is permutation-invariant in u' and equivariant in V'.
/// u is [B,Cu,h,w], V is [S,B,Cv,h,w]; returns (u' [B,C,h,w], V' [S,B,C,h,w]);
/// V' is an invalid Var when update_support is off.
std::pair<Var, Var> crossblock_forward(Tape& t, const CrossBlockVars& params, Var u,
                                       Var V, Mode mode, double leaky_slope,
                                       int padding);

/// Either architecture behind one parameter registry. The encoder-decoder
/// layout is shared; contextseisnet runs CrossBlocks over a query stream u
/// and a support stream V, the unet baseline runs plain double-conv blocks
/// on the query alone.
class Model {
public:
  Model(Arch arch, ModelSpec spec, std::uint64_t init_seed);

  Arch arch() const { return arch_; }
  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t param_count() const { return store_.trainable_scalar_count(); }

  const std::string& model_id() const { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }

  /// Batched forward. x is [B,1,H,W]; for contextseisnet, support is a
  /// [S,B,2,H,W] tensor holding (prompt, prompt-label) channel pairs per
  /// batch element (S >= 1); the unet ignores it. Returns [B,1,H,W]
  /// predicted primaries.
  Var forward(Tape& t, Var x, Var support, Mode mode);

  /// Single-gather inference: query [H,W] plus one SupportSet shared across
  /// the (singleton) batch. Returns [H,W].
  Tensor predict(const Tensor& x_hw, const SupportSet& support, Mode mode = Mode::eval);

  /// Checkpoint directory: checkpoint.json + params.bin (SEIS records in
  /// registry order, trainable parameters and running-stat buffers alike).
  void save(const std::filesystem::path& dir, const CheckpointMeta& meta = {}) const;
  static Model load(const std::filesystem::path& dir);

private:
  struct ConvRef {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
  };
  struct NormRef {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    Parameter* running_mean = nullptr;
    Parameter* running_var = nullptr;
  };
  struct CrossBlockRefs {
    ConvRef conv1, conv2, conv3;
    NormRef norm_u, norm_v;
  };
  struct DoubleConvRefs {
    ConvRef conv_a, conv_b;
    NormRef norm_a, norm_b;
  };

  void build(std::uint64_t init_seed);

  std::pair<Var, Var> crossblock(Tape& t, const CrossBlockRefs& blk, Var u, Var V,
                                 Mode mode);
  Var double_conv(Tape& t, const DoubleConvRefs& blk, Var u, Mode mode);
  Var forward_csn(Tape& t, Var x, Var support, Mode mode);
  Var forward_unet(Tape& t, Var x, Mode mode);

  Arch arch_;
  ModelSpec spec_;
  ParamStore store_;
  std::string model_id_;
  std::vector<CrossBlockRefs> cs_enc_, cs_dec_;
  std::vector<DoubleConvRefs> un_enc_, un_dec_;
  ConvRef head_;
};

}  // namespace seis
