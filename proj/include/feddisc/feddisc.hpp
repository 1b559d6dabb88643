#pragma once

// One-shot semi-supervised federated learning with diffusion-generated
// pseudo-labeled data, end to end: synthetic corpus, frozen encoder, client
// summarization + noising, conditional denoiser + guided DDIM sampling,
// one-round federation with exact byte accounting, linear-head fine-tuning.

#include "feddisc/broadcast.hpp"
#include "feddisc/classifier.hpp"
#include "feddisc/clientside.hpp"
#include "feddisc/config.hpp"
#include "feddisc/corpus.hpp"
#include "feddisc/denoiser.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/experiment.hpp"
#include "feddisc/featurizer.hpp"
#include "feddisc/federation.hpp"
#include "feddisc/io.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/parallel.hpp"
#include "feddisc/rng.hpp"
#include "feddisc/sampler.hpp"
#include "feddisc/schedule.hpp"
