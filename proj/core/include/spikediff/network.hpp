#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spikediff/neuron.hpp"
#include "spikediff/ops.hpp"
#include "spikediff/parameters.hpp"

namespace spikediff {

enum class ArchMode { Mlp, Unet };
enum class BlockType { PreSpike, Tsm };

struct NetConfig {
  ArchMode mode = ArchMode::Mlp;

  // Vector data (MLP mode).
  int data_dim = 2;
  int hidden = 64;
  int mlp_blocks = 2;

  // Image data (UNet mode).
  int in_channels = 1;
  int image_size = 32;
  int base_channels = 16;
  std::vector<int> channel_mults{1, 2};
  int blocks_per_stage = 2;

  int emb_dim = 64;
  int time_steps = 4;          // SNN simulation steps
  int diffusion_steps = 1000;  // range of the time embedding
  LifParams lif;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  /// Shape of one sample: [data_dim] or [in_channels, image_size, image_size].
  Shape sample_shape() const;
};

/// A residual block with two synaptic sites, `<name>.conv1` and `<name>.conv2`.
/// Dense blocks use linear layers in place of 3x3 convolutions.
struct ResidualBlock {
  std::string name;
  int channels = 0;
  bool dense = false;
};

enum class LayerKind { Conv, Dense };

/// Synaptic layer as seen by the energy model.
struct LayerGeometry {
  std::string id;
  LayerKind kind = LayerKind::Dense;
  /// True when the layer consumes a binary spike train every SNN step.
  bool spike_input = false;
  std::int64_t in_channels = 0;   // D for dense
  std::int64_t out_channels = 0;  // E for dense
  std::int64_t kernel = 1;
  std::int64_t out_h = 1;
  std::int64_t out_w = 1;
};

/// Everything a block needs from the surrounding forward pass.
struct BlockContext {
  ParamBinding* params = nullptr;
  LifParams lif;
  int time_steps = 1;
  BatchNormOptions bn;
  SpikeRecorder* recorder = nullptr;
  BlockType type = BlockType::PreSpike;
};

class SpikingNet {
 public:
  SpikingNet(NetConfig config, std::uint64_t seed);

  const NetConfig& config() const noexcept { return config_; }
  BlockType block_type() const noexcept { return block_type_; }

  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  const std::vector<ResidualBlock>& blocks() const noexcept { return blocks_; }
  std::vector<LayerGeometry> layer_geometry() const;

  /// Multiplier applied to every spiking threshold at evaluation time.
  double threshold_scale() const noexcept { return threshold_scale_; }
  void set_threshold_scale(double rho);
  LifParams effective_lif() const;

  /// Trainable scalar count.
  std::size_t parameter_count() const { return params_.trainable_size(); }

 private:
  friend SpikingNet convert_to_tsm(const SpikingNet& net);

  void build_mlp(std::mt19937_64& rng);
  void build_unet(std::mt19937_64& rng);

  NetConfig config_;
  BlockType block_type_ = BlockType::PreSpike;
  ParameterStore params_;
  std::vector<ResidualBlock> blocks_;
  double threshold_scale_ = 1.0;
};

/// Registers the weights of a residual block (and its time-embedding
/// projection when emb_dim > 0).
void init_residual_block(ParameterStore& store, const ResidualBlock& block, int emb_dim,
                         std::mt19937_64& rng);

/// Adds `<site>.tsm_p` = ones(T) for both synaptic sites of the block.
void add_temporal_parameters(ParameterStore& store, const ResidualBlock& block, int time_steps);

/// Pre-spike residual block:
///   S = LIF(O_in); O_mid = BN(Conv(S)) + O_in (+ time embedding);
///   S' = LIF(O_mid); O_out = BN(Conv(S')) + O_mid.
Var<float> prespike_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> input,
                            std::optional<Var<float>> emb = std::nullopt);

/// As prespike_forward, with each post-synaptic current at SNN step n
/// multiplied by the block's temporal parameter p[n].
Var<float> tsm_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> input,
                       std::optional<Var<float>> emb = std::nullopt);

struct SewOutput {
  Var<float> first_sum;   // BN(Conv(S_in)) + S_in
  Var<float> mid_spikes;
  Var<float> second_sum;  // BN(Conv(S_mid)) + S_mid
  Var<float> out_spikes;
};

/// Spike-element-wise residual block, kept as a reference for the residual
/// domain comparison. Rejects non-binary input.
SewOutput sew_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> spikes_in);

/// Sinusoidal encoding [N, dim] of 0-based time indices.
Tensor sinusoidal_embedding(std::span<const int> t, int dim, int t_limit);

/// Sinusoidal encoding followed by the learned two-layer projection.
/// `t` holds 0-based indices in [0, diffusion_steps).
Var<float> time_embedding(const SpikingNet& net, ParamBinding& params, std::span<const int> t);

/// Noise prediction for x_t with diffusion steps `t` (1-based, one per sample).
Var<float> net_forward(SpikingNet& net, ParamBinding& params, Var<float> x_t, std::span<const int> t,
                       NormMode norm, SpikeRecorder* recorder = nullptr);

/// Convenience evaluation without gradients, in eval norm mode.
Tensor predict(SpikingNet& net, const Tensor& x_t, std::span<const int> t,
               SpikeRecorder* recorder = nullptr);

/// Copy of `net` with every residual block switched to TSM, p = 1.
SpikingNet convert_to_tsm(const SpikingNet& net);

/// Copy of `net` whose thresholds are multiplied by rho.
SpikingNet scale_thresholds(const SpikingNet& net, double rho);

/// Restores the previous threshold scale on destruction.
class ThresholdScaleGuard {
 public:
  ThresholdScaleGuard(SpikingNet& net, double rho);
  ~ThresholdScaleGuard();
  ThresholdScaleGuard(const ThresholdScaleGuard&) = delete;
  ThresholdScaleGuard& operator=(const ThresholdScaleGuard&) = delete;

 private:
  SpikingNet& net_;
  double previous_;
};

}  // namespace spikediff
