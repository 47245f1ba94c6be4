#pragma once

#include "rseq/errors.hpp"
#include "rseq/kv_text.hpp"
#include "rseq/numerics/gradcheck.hpp"
#include "rseq/numerics/ops.hpp"
#include "rseq/numerics/rng.hpp"
#include "rseq/numerics/tensor.hpp"
#include "rseq/layers/attention.hpp"
#include "rseq/layers/layer.hpp"
#include "rseq/layers/local_rnn.hpp"
#include "rseq/layers/params.hpp"
#include "rseq/layers/rnn_cell.hpp"
#include "rseq/model/config.hpp"
#include "rseq/model/metrics.hpp"
#include "rseq/model/model.hpp"
#include "rseq/data/batch.hpp"
#include "rseq/data/batchify.hpp"
#include "rseq/data/copy_task.hpp"
#include "rseq/data/pixels.hpp"
#include "rseq/data/text_corpus.hpp"
#include "rseq/training/checkpoint.hpp"
#include "rseq/training/optimizer.hpp"
#include "rseq/training/schedule.hpp"
#include "rseq/training/state.hpp"
#include "rseq/training/trainer.hpp"
#include "rseq/cli/commands.hpp"
#include "rseq/cli/run_config.hpp"
