#pragma once

#include "opseq/bench.hpp"
#include "opseq/checkpoint.hpp"
#include "opseq/config.hpp"
#include "opseq/dataset.hpp"
#include "opseq/encoding.hpp"
#include "opseq/error.hpp"
#include "opseq/evm_disasm.hpp"
#include "opseq/io.hpp"
#include "opseq/lstm.hpp"
#include "opseq/metrics.hpp"
#include "opseq/pipeline.hpp"
#include "opseq/smote.hpp"
