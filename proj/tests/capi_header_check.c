/* Compiled as C: the public header must stay valid C. */
#include "crowdcount/crowdcount.h"

int capi_header_check_label(long long cc_gt, long long cc_max) {
  int cls = -1;
  if (cc_label_patch(cc_gt, cc_max, &cls) != CC_OK) return -1;
  return cls;
}
