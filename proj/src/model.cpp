#include "packdit/model.hpp"

namespace packdit {

DiTConfig nano_config() {
  DiTConfig c;
  c.depth = 4;
  c.width = 128;
  c.heads = 4;
  c.motion_token_dim = 8;
  c.text_latent_dim = 64;
  c.max_motion_tokens = 64;
  c.max_text_tokens = 16;
  c.patch_size = 1;
  c.mlp_ratio = 4;
  return c;
}

}  // namespace packdit
