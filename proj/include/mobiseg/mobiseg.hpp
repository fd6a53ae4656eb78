#pragma once

#include "mobiseg/common.hpp"
#include "mobiseg/geometry.hpp"
#include "mobiseg/graph.hpp"
#include "mobiseg/ingest.hpp"
#include "mobiseg/io.hpp"
#include "mobiseg/nullmodel.hpp"
#include "mobiseg/pipeline.hpp"
#include "mobiseg/segregation.hpp"
#include "mobiseg/synth.hpp"
