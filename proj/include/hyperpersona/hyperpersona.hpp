#pragma once

#include "corpus.hpp"
#include "embedding.hpp"
#include "hiergraph.hpp"
#include "hypergraph.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "segmenter.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "util.hpp"
