#pragma once

// Umbrella header: the whole slice-based latent diffusion toolkit.

#include "sbld/common.hpp"
#include "sbld/denoiser.hpp"
#include "sbld/diffusion.hpp"
#include "sbld/features.hpp"
#include "sbld/io.hpp"
#include "sbld/latent.hpp"
#include "sbld/metrics.hpp"
#include "sbld/nn.hpp"
#include "sbld/phantom.hpp"
#include "sbld/pipeline.hpp"
#include "sbld/segment.hpp"
#include "sbld/vae.hpp"
#include "sbld/volume.hpp"
